//! Function Call Graph construction and reachability.
//!
//! Each parsed call site either resolves to one edge or lands in the
//! `unresolved` list with a reason; resolution never aborts. Receiver
//! typing is purely syntactic: parameter, local, and state-variable
//! declarations, plus one level of chaining through a called function's
//! return type.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::parser::{
    CallKindHint, CallSite, ContractDef, FunctionId, ParsedUnit, SourceSpan,
};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown function: {0}")]
    UnknownFunction(FunctionId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Internal,
    External,
    Modifier,
    Constructor,
}

impl EdgeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeKind::Internal => "internal",
            EdgeKind::External => "external",
            EdgeKind::Modifier => "modifier",
            EdgeKind::Constructor => "constructor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Exact,
    MostDerived,
    Ambiguous,
}

impl Resolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::Exact => "exact",
            Resolution::MostDerived => "most-derived",
            Resolution::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CallEdge {
    pub caller: FunctionId,
    pub callee: FunctionId,
    pub kind: EdgeKind,
    pub resolution: Resolution,
    pub site: SourceSpan,
    /// All candidate callees when resolution is ambiguous (>= 2 entries).
    pub candidates: Vec<FunctionId>,
}

#[derive(Debug, Clone)]
pub struct CallGraph {
    pub nodes: BTreeSet<FunctionId>,
    /// Edge lists in source order of their call sites.
    pub adjacency: BTreeMap<FunctionId, Vec<CallEdge>>,
    pub unresolved: Vec<(CallSite, String)>,
}

impl CallGraph {
    /// Graph over explicit nodes and edges; used by synthetic-graph tests.
    pub fn from_edges(nodes: Vec<FunctionId>, edges: Vec<(FunctionId, FunctionId)>) -> Self {
        let node_set: BTreeSet<FunctionId> = nodes.into_iter().collect();
        let mut adjacency: BTreeMap<FunctionId, Vec<CallEdge>> = BTreeMap::new();
        for (caller, callee) in edges {
            adjacency.entry(caller.clone()).or_default().push(CallEdge {
                caller,
                callee,
                kind: EdgeKind::Internal,
                resolution: Resolution::Exact,
                site: SourceSpan { start: 0, end: 1, line: 1 },
                candidates: Vec::new(),
            });
        }
        CallGraph { nodes: node_set, adjacency, unresolved: Vec::new() }
    }

    pub fn edges_of(&self, id: &FunctionId) -> &[CallEdge] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Adjacency-list export: `callerId -> calleeId [kind,resolution]`.
    pub fn adjacency_text(&self) -> String {
        let mut out = String::new();
        for edges in self.adjacency.values() {
            for e in edges {
                let _ = writeln!(
                    out,
                    "{} -> {} [{},{}]",
                    e.caller,
                    e.callee,
                    e.kind.as_str(),
                    e.resolution.as_str()
                );
            }
        }
        out
    }

    /// DOT export with edge kind labels.
    pub fn dot(&self) -> String {
        let mut out = String::from("digraph fcg {\n");
        for node in &self.nodes {
            let _ = writeln!(out, "    \"{node}\";");
        }
        for edges in self.adjacency.values() {
            for e in edges {
                let _ = writeln!(
                    out,
                    "    \"{}\" -> \"{}\" [label=\"{}\"];",
                    e.caller,
                    e.callee,
                    e.kind.as_str()
                );
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Build the FCG for a parsed unit.
pub fn build_fcg(unit: &ParsedUnit) -> CallGraph {
    let resolver = Resolver::new(unit);
    let mut nodes: BTreeSet<FunctionId> = BTreeSet::new();
    nodes.extend(unit.functions.iter().map(|f| f.id.clone()));
    nodes.extend(unit.modifiers.iter().map(|m| m.id.clone()));

    let mut adjacency: BTreeMap<FunctionId, Vec<CallEdge>> = BTreeMap::new();
    for id in &nodes {
        adjacency.insert(id.clone(), Vec::new());
    }
    let mut unresolved = Vec::new();

    for site in &unit.call_sites {
        match resolver.resolve(site) {
            Ok(edge) => adjacency.entry(edge.caller.clone()).or_default().push(edge),
            Err(reason) => unresolved.push((site.clone(), reason)),
        }
    }

    CallGraph { nodes, adjacency, unresolved }
}

/// All nodes reachable from `target` (target itself excluded), in
/// deterministic DFS pre-order with source-order child visitation.
pub fn reachable_set(graph: &CallGraph, target: &FunctionId) -> Result<Vec<FunctionId>, GraphError> {
    if !graph.nodes.contains(target) {
        return Err(GraphError::UnknownFunction(target.clone()));
    }
    let mut order = Vec::new();
    let mut visited: BTreeSet<&FunctionId> = BTreeSet::new();
    visited.insert(target);
    let mut stack: Vec<&FunctionId> = graph
        .edges_of(target)
        .iter()
        .rev()
        .map(|e| &e.callee)
        .collect();
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            continue;
        }
        order.push(id.clone());
        for e in graph.edges_of(id).iter().rev() {
            if !visited.contains(&e.callee) {
                stack.push(&e.callee);
            }
        }
    }
    Ok(order)
}

struct Resolver<'a> {
    unit: &'a ParsedUnit,
    contracts: BTreeMap<&'a str, &'a ContractDef>,
    /// (contract, name, arity) -> declared function id.
    functions: BTreeMap<(&'a str, &'a str, usize), FunctionId>,
    /// contract -> constructor id.
    constructors: BTreeMap<&'a str, FunctionId>,
    /// (contract, name) -> modifier id.
    modifiers: BTreeMap<(&'a str, &'a str), FunctionId>,
}

impl<'a> Resolver<'a> {
    fn new(unit: &'a ParsedUnit) -> Self {
        let contracts = unit.contracts.iter().map(|c| (c.name.as_str(), c)).collect();
        let mut functions = BTreeMap::new();
        let mut constructors = BTreeMap::new();
        for f in &unit.functions {
            functions.insert(
                (f.id.contract.as_str(), f.name.as_str(), f.id.arity),
                f.id.clone(),
            );
            if f.name == "constructor" {
                constructors.insert(f.id.contract.as_str(), f.id.clone());
            }
        }
        let modifiers = unit
            .modifiers
            .iter()
            .map(|m| ((m.id.contract.as_str(), m.name.as_str()), m.id.clone()))
            .collect();
        Resolver { unit, contracts, functions, constructors, modifiers }
    }

    fn resolve(&self, site: &CallSite) -> Result<CallEdge, String> {
        match site.kind_hint {
            CallKindHint::ModifierInvocation => self.resolve_modifier(site),
            CallKindHint::New => self.resolve_constructor(site),
            CallKindHint::Bare => self.resolve_bare(site),
            CallKindHint::Member => self.resolve_member(site),
        }
    }

    fn edge(
        &self,
        site: &CallSite,
        callee: FunctionId,
        kind: EdgeKind,
        resolution: Resolution,
        candidates: Vec<FunctionId>,
    ) -> CallEdge {
        CallEdge {
            caller: site.caller.clone(),
            callee,
            kind,
            resolution,
            site: site.span,
            candidates,
        }
    }

    /// Base contracts of `contract` in linearization-free DFS order.
    fn bases_of(&self, contract: &str) -> Vec<&'a str> {
        let mut out = Vec::new();
        let mut stack: Vec<&str> = match self.contracts.get(contract) {
            Some(c) => c.bases.iter().map(String::as_str).collect(),
            None => return out,
        };
        stack.reverse();
        while let Some(base) = stack.pop() {
            if out.contains(&base) || base == contract {
                continue;
            }
            if let Some(def) = self.contracts.get(base) {
                out.push(def.name.as_str());
                for b in def.bases.iter().rev() {
                    stack.push(b);
                }
            }
        }
        out
    }

    /// Contracts that (transitively) derive from `base`, in declaration order.
    fn derived_of(&self, base: &str) -> Vec<&'a str> {
        self.unit
            .contracts
            .iter()
            .filter(|c| c.name != base && self.bases_of(&c.name).contains(&base))
            .map(|c| c.name.as_str())
            .collect()
    }

    fn lookup_in(&self, contract: &str, name: &str, arity: usize) -> Option<FunctionId> {
        if let Some(id) = self.functions.get(&(contract, name, arity)) {
            return Some(id.clone());
        }
        for base in self.bases_of(contract) {
            if let Some(id) = self.functions.get(&(base, name, arity)) {
                return Some(id.clone());
            }
        }
        None
    }

    fn resolve_modifier(&self, site: &CallSite) -> Result<CallEdge, String> {
        let caller_contract = site.caller.contract.as_str();
        let name = site.callee_name.as_str();
        if let Some(id) = self.modifiers.get(&(caller_contract, name)) {
            return Ok(self.edge(site, id.clone(), EdgeKind::Modifier, Resolution::Exact, vec![]));
        }
        for base in self.bases_of(caller_contract) {
            if let Some(id) = self.modifiers.get(&(base, name)) {
                return Ok(self.edge(site, id.clone(), EdgeKind::Modifier, Resolution::Exact, vec![]));
            }
        }
        // Base-constructor invocation in a constructor header.
        if self.contracts.contains_key(name) {
            if let Some(id) = self.constructors.get(name) {
                return Ok(self.edge(
                    site,
                    id.clone(),
                    EdgeKind::Constructor,
                    Resolution::Exact,
                    vec![],
                ));
            }
            return Err(format!("contract {name} has no declared constructor"));
        }
        // Any unique modifier of that name elsewhere in the unit.
        let hits: Vec<&FunctionId> = self
            .unit
            .modifiers
            .iter()
            .filter(|m| m.name == name)
            .map(|m| &m.id)
            .collect();
        match hits.as_slice() {
            [] => Err(format!("modifier {name} not declared")),
            [only] => Ok(self.edge(
                site,
                (*only).clone(),
                EdgeKind::Modifier,
                Resolution::MostDerived,
                vec![],
            )),
            many => Ok(self.edge(
                site,
                many[0].clone(),
                EdgeKind::Modifier,
                Resolution::Ambiguous,
                many.iter().map(|id| (*id).clone()).collect(),
            )),
        }
    }

    fn resolve_constructor(&self, site: &CallSite) -> Result<CallEdge, String> {
        let name = site.callee_name.as_str();
        if !self.contracts.contains_key(name) {
            return Err(format!("new target {name} is not a declared contract"));
        }
        // Constructors matched by contract name alone; arity is ignored so
        // clone-style construction with packed init data still resolves.
        match self.constructors.get(name) {
            Some(id) => Ok(self.edge(
                site,
                id.clone(),
                EdgeKind::Constructor,
                Resolution::Exact,
                vec![],
            )),
            None => Err(format!("contract {name} has no declared constructor")),
        }
    }

    fn resolve_bare(&self, site: &CallSite) -> Result<CallEdge, String> {
        let caller_contract = site.caller.contract.as_str();
        if let Some(id) = self.lookup_in(caller_contract, &site.callee_name, site.arg_count) {
            return Ok(self.edge(site, id, EdgeKind::Internal, Resolution::Exact, vec![]));
        }
        // Free functions live under the empty contract name.
        if let Some(id) = self.functions.get(&("", site.callee_name.as_str(), site.arg_count)) {
            return Ok(self.edge(site, id.clone(), EdgeKind::Internal, Resolution::Exact, vec![]));
        }
        Err(format!(
            "{} not found in {} or its bases",
            site.callee_name, caller_contract
        ))
    }

    fn resolve_member(&self, site: &CallSite) -> Result<CallEdge, String> {
        let qualifier = site.qualifier.as_deref().unwrap_or("");
        let caller_contract = site.caller.contract.as_str();

        let receiver_contract = if qualifier == "this" {
            Some(caller_contract.to_string())
        } else if qualifier == "super" {
            // Resolve directly through the caller's bases.
            for base in self.bases_of(caller_contract) {
                if let Some(id) = self.lookup_in(base, &site.callee_name, site.arg_count) {
                    return Ok(self.edge(site, id, EdgeKind::Internal, Resolution::Exact, vec![]));
                }
            }
            return Err(format!("super.{} not found in bases", site.callee_name));
        } else if self.contracts.contains_key(qualifier) {
            // Library-style static call.
            Some(qualifier.to_string())
        } else {
            self.type_of_expr(qualifier, &site.caller)
        };

        let Some(receiver) = receiver_contract else {
            return Err(format!(
                "receiver type of `{qualifier}` is not syntactically recoverable"
            ));
        };
        if !self.contracts.contains_key(receiver.as_str()) {
            return Err(format!("receiver type {receiver} is not a declared contract"));
        }

        let kind = if receiver == caller_contract {
            EdgeKind::Internal
        } else {
            EdgeKind::External
        };
        let declared = self.lookup_in(&receiver, &site.callee_name, site.arg_count);
        if let Some(id) = &declared {
            let bodied = self.unit.function(id).is_some_and(|f| f.body_present);
            if bodied {
                return Ok(self.edge(site, id.clone(), kind, Resolution::Exact, vec![]));
            }
        }

        // Bodiless (interface) declaration: prefer implementations in
        // derived contracts.
        let candidates: Vec<FunctionId> = self
            .derived_of(&receiver)
            .into_iter()
            .filter_map(|d| {
                self.functions
                    .get(&(d, site.callee_name.as_str(), site.arg_count))
                    .cloned()
            })
            .collect();
        match (declared, candidates.as_slice()) {
            (None, []) => Err(format!(
                "{}.{}/{} not declared on {} or any implementation",
                receiver, site.callee_name, site.arg_count, receiver
            )),
            // No implementation in the unit: keep the signature-only edge.
            (Some(id), []) => Ok(self.edge(site, id, kind, Resolution::Exact, vec![])),
            (_, [only]) => Ok(self.edge(site, only.clone(), kind, Resolution::MostDerived, vec![])),
            (_, many) => Ok(self.edge(
                site,
                many[0].clone(),
                kind,
                Resolution::Ambiguous,
                many.to_vec(),
            )),
        }
    }

    /// Declared contract type of a receiver expression, when recoverable:
    /// a parameter, local, or state variable; an explicit `C(x)` cast; or a
    /// one-step chain `x.m()` through m's declared return type.
    fn type_of_expr(&self, expr: &str, caller: &FunctionId) -> Option<String> {
        let expr = expr.trim();
        // Explicit cast: C(...)
        if let Some(open) = expr.find('(') {
            if expr.ends_with(')') {
                let head = &expr[..open];
                if self.contracts.contains_key(head) {
                    return Some(head.to_string());
                }
                // Chained call: x.m(...)
                if let Some((recv, method)) = head.rsplit_once('.') {
                    let recv_ty = self.type_of_expr(recv, caller)?;
                    let f = self.unit.functions.iter().find(|f| {
                        f.id.contract == recv_ty && f.name == method
                    })?;
                    return f.return_type.clone();
                }
                return None;
            }
        }
        // Indexed access: v[...] -> mapping value type of v.
        if let Some(open) = expr.find('[') {
            let head = &expr[..open];
            return self.type_of_name(head, caller);
        }
        if expr.contains('.') || expr.contains('(') {
            return None;
        }
        self.type_of_name(expr, caller)
    }

    fn type_of_name(&self, name: &str, caller: &FunctionId) -> Option<String> {
        let f = self.unit.function(caller);
        if let Some(f) = f {
            for (n, ty) in f.locals.iter().rev() {
                if n == name {
                    return Some(ty.clone());
                }
            }
            for (ty, n) in &f.params {
                if n == name && self.contracts.contains_key(ty.as_str()) {
                    return Some(ty.clone());
                }
            }
        }
        let mut scopes = vec![caller.contract.as_str()];
        scopes.extend(self.bases_of(&caller.contract));
        for scope in scopes {
            if let Some(c) = self.contracts.get(scope) {
                for (n, ty) in &c.state_vars {
                    if n == name {
                        return Some(ty.clone());
                    }
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn id(c: &str, n: &str, a: usize) -> FunctionId {
        FunctionId::new(c, n, a)
    }

    #[test]
    fn call_free_function_yields_node_without_edges() {
        let unit = parse("contract C { function f() public pure {} }").unwrap();
        let graph = build_fcg(&unit);
        assert_eq!(graph.nodes.len(), 1);
        assert!(graph.edges_of(&id("C", "f", 0)).is_empty());
        assert!(graph.unresolved.is_empty());
    }

    #[test]
    fn internal_external_and_modifier_kinds() {
        let src = "contract T { function ping() public {} } \
                   contract C { \
                     T public t; \
                     modifier guard() { _; } \
                     function f() public guard { helper(); t.ping(); } \
                     function helper() internal {} \
                   }";
        let unit = parse(src).unwrap();
        let graph = build_fcg(&unit);
        let edges = graph.edges_of(&id("C", "f", 0));
        let kinds: Vec<(String, EdgeKind)> = edges
            .iter()
            .map(|e| (e.callee.to_string(), e.kind))
            .collect();
        assert_eq!(
            kinds,
            vec![
                ("C.guard/0".to_string(), EdgeKind::Modifier),
                ("C.helper/0".to_string(), EdgeKind::Internal),
                ("T.ping/0".to_string(), EdgeKind::External),
            ]
        );
    }

    #[test]
    fn new_expression_resolves_to_constructor() {
        let src = "contract T { constructor() {} } \
                   contract C { function f() public { T t = new T(); t; } }";
        let unit = parse(src).unwrap();
        let graph = build_fcg(&unit);
        let edges = graph.edges_of(&id("C", "f", 0));
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].callee, id("T", "constructor", 0));
        assert_eq!(edges[0].kind, EdgeKind::Constructor);
    }

    #[test]
    fn interface_call_flags_ambiguity_with_candidates() {
        let src = "interface I { function f() external; } \
                   contract A is I { function f() public {} } \
                   contract B is I { function f() public {} } \
                   contract C { function go(I target) public { target.f(); } }";
        let unit = parse(src).unwrap();
        let graph = build_fcg(&unit);
        let edges = graph.edges_of(&id("C", "go", 1));
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].resolution, Resolution::Ambiguous);
        assert_eq!(
            edges[0].candidates,
            vec![id("A", "f", 0), id("B", "f", 0)]
        );
        // Deterministic target: first implementation in declaration order.
        assert_eq!(edges[0].callee, id("A", "f", 0));
    }

    #[test]
    fn untypeable_receiver_goes_to_unresolved() {
        let src = "contract C { function f(address a) public { a.call; unknownVar.doIt(); } }";
        let unit = parse(src).unwrap();
        let graph = build_fcg(&unit);
        assert!(graph.edges_of(&id("C", "f", 1)).is_empty());
        assert_eq!(graph.unresolved.len(), 1);
        assert_eq!(graph.unresolved[0].0.callee_name, "doIt");
    }

    #[test]
    fn reachable_set_excludes_target_and_visits_cycles_once() {
        let nodes = vec![id("C", "f", 0), id("C", "g", 0), id("C", "h", 0)];
        let graph = CallGraph::from_edges(
            nodes.clone(),
            vec![
                (nodes[0].clone(), nodes[1].clone()),
                (nodes[1].clone(), nodes[2].clone()),
                (nodes[2].clone(), nodes[0].clone()),
            ],
        );
        let reach = reachable_set(&graph, &nodes[0]).unwrap();
        assert_eq!(reach, vec![nodes[1].clone(), nodes[2].clone()]);
    }

    #[test]
    fn leaf_function_reaches_nothing() {
        let nodes = vec![id("C", "f", 0)];
        let graph = CallGraph::from_edges(nodes.clone(), vec![]);
        assert!(reachable_set(&graph, &nodes[0]).unwrap().is_empty());
    }

    #[test]
    fn unknown_function_is_an_error() {
        let graph = CallGraph::from_edges(vec![], vec![]);
        assert!(matches!(
            reachable_set(&graph, &id("C", "f", 0)),
            Err(GraphError::UnknownFunction(_))
        ));
    }

    #[test]
    fn exports_are_deterministic() {
        let src = "contract C { modifier m() { _; } function f() public m { g(); } function g() public {} }";
        let unit = parse(src).unwrap();
        let g1 = build_fcg(&unit);
        let g2 = build_fcg(&unit);
        assert_eq!(g1.adjacency_text(), g2.adjacency_text());
        assert!(g1.adjacency_text().contains("C.f/0 -> C.m/0 [modifier,exact]"));
        assert!(g1.dot().starts_with("digraph fcg {"));
    }
}
