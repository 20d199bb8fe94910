//! End-to-end pipeline over the TokenizingVault fixture: flatten the
//! project, parse it, build the call graph, and generate the per-function
//! Code Call Lists.

use std::path::Path;

use coaudit_core::callgraph::{build_fcg, EdgeKind};
use coaudit_core::ccl::{generate_all_ccls, generate_ccl, SegmentRole};
use coaudit_core::ingest::{flatten, load_project, parse_remappings};
use coaudit_core::parser::{parse, FunctionId};

fn fixture_root() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/tokenizing_vault")
}

fn flattened() -> String {
    let root = fixture_root();
    let remappings =
        parse_remappings(&std::fs::read_to_string(root.join("remappings.txt")).unwrap());
    let project =
        load_project(&root, "contracts/TokenizingVault.sol", &remappings).unwrap();
    let flat = flatten(&project).unwrap();
    assert_eq!(flat.included_files.len(), 4);
    flat.text
}

fn id(c: &str, n: &str, a: usize) -> FunctionId {
    FunctionId::new(c, n, a)
}

#[test]
fn flattening_pulls_in_the_whole_dependency_closure() {
    let text = flattened();
    for name in ["contract ERC20 ", "contract ERC20CreditToken", "contract ReentrancyGuard", "contract TokenizingVault"] {
        assert!(text.contains(name), "missing {name}");
    }
    // Dependencies come before the entry contract.
    assert!(text.find("contract ERC20 ").unwrap() < text.find("contract TokenizingVault").unwrap());
    // Imports are gone; the entry pragma survives exactly once.
    assert!(!text.contains("import "));
    assert_eq!(text.matches("pragma solidity").count(), 1);
    assert!(text.contains("pragma solidity 0.8.15;"));
    // One SPDX line total.
    assert_eq!(text.matches("SPDX-License-Identifier").count(), 1);
}

#[test]
fn call_graph_matches_the_contract_semantics() {
    let unit = parse(&flattened()).unwrap();
    let graph = build_fcg(&unit);

    // create: modifier + two external calls.
    let create_edges = graph.edges_of(&id("TokenizingVault", "create", 2));
    let callees: Vec<String> = create_edges.iter().map(|e| e.callee.to_string()).collect();
    assert!(callees.contains(&"ReentrancyGuard.nonReentrant/0".to_string()));
    assert!(callees.contains(&"ERC20.transferFrom/3".to_string()));
    assert!(callees.contains(&"ERC20CreditToken.mint/2".to_string()));
    assert!(create_edges
        .iter()
        .filter(|e| e.callee.name != "nonReentrant")
        .all(|e| e.kind == EdgeKind::External));

    // redeem: burn, the underlying() getter, and its chained transfer.
    let redeem_callees: Vec<String> = graph
        .edges_of(&id("TokenizingVault", "redeem", 2))
        .iter()
        .map(|e| e.callee.to_string())
        .collect();
    assert!(redeem_callees.contains(&"ERC20CreditToken.burn/2".to_string()));
    assert!(redeem_callees.contains(&"ERC20CreditToken.underlying/0".to_string()));
    assert!(redeem_callees.contains(&"ERC20.transfer/2".to_string()));

    // The vault constructor instantiates the credit-token implementation.
    let ctor_edges = graph.edges_of(&id("TokenizingVault", "constructor", 0));
    assert!(ctor_edges
        .iter()
        .any(|e| e.callee == id("ERC20CreditToken", "constructor", 3)
            && e.kind == EdgeKind::Constructor));
}

#[test]
fn deploy_ccl_matches_the_documented_shape() {
    let unit = parse(&flattened()).unwrap();
    let graph = build_fcg(&unit);
    let ccl = generate_ccl(&graph, &unit, &id("TokenizingVault", "deploy", 1), 7000).unwrap();

    let segment_ids: Vec<String> =
        ccl.segments.iter().map(|s| s.function_id.to_string()).collect();
    assert_eq!(segment_ids[0], "TokenizingVault.deploy/1");
    assert!(segment_ids.contains(&"ERC20CreditToken.constructor/3".to_string()));
    assert!(segment_ids.contains(&"ReentrancyGuard.nonReentrant/0".to_string()));

    // Roles line up with the segment kinds.
    assert_eq!(ccl.segments[0].role, SegmentRole::Target);
    let ctor = ccl
        .segments
        .iter()
        .find(|s| s.function_id == id("ERC20CreditToken", "constructor", 3))
        .unwrap();
    assert_eq!(ctor.role, SegmentRole::Constructor);
    assert!(ctor.code.contains("ERC20(name, symbol)"));
    let guard = ccl
        .segments
        .iter()
        .find(|s| s.function_id == id("ReentrancyGuard", "nonReentrant", 0))
        .unwrap();
    assert_eq!(guard.role, SegmentRole::Modifier);
    assert!(guard.code.contains("_guardCounter += 1"));
    // Modifiers are hoisted to the end of the list.
    assert_eq!(ccl.segments.last().unwrap().role, SegmentRole::Modifier);
    assert!(!ccl.truncated);
}

#[test]
fn the_vault_yields_exactly_four_ccls() {
    let unit = parse(&flattened()).unwrap();
    let graph = build_fcg(&unit);
    let (ccls, diagnostics) = generate_all_ccls(&graph, &unit, "TokenizingVault", 7000);
    assert!(diagnostics.is_empty(), "{diagnostics:?}");
    let ids: Vec<String> = ccls.iter().map(|(id, _)| id.to_string()).collect();
    assert_eq!(
        ids,
        vec![
            "TokenizingVault.constructor/0",
            "TokenizingVault.create/2",
            "TokenizingVault.redeem/2",
            "TokenizingVault.deploy/1",
        ]
    );
    // Every CCL is dependency-closed: each segment is either the target or
    // reachable from it, and appears exactly once.
    for (_, ccl) in &ccls {
        let mut seen = std::collections::BTreeSet::new();
        for seg in &ccl.segments {
            assert!(seen.insert(seg.function_id.clone()), "duplicate {}", seg.function_id);
        }
    }
}
