//! Regenerates the committed vaultdemo cassette from scripted responses.
//! Run explicitly after changing the fixture or prompt templates:
//! `cargo test -p coaudit --test regen_cassette -- --ignored`

use std::path::Path;

use coaudit_core::callgraph::build_fcg;
use coaudit_core::ccl::generate_all_ccls;
use coaudit_core::gateway::{Cassette, LlmRequest};
use coaudit_core::ingest::{flatten, load_project};
use coaudit_core::parser::parse;
use coaudit_core::prompts::{plan_audit, PromptMode};

fn scripted_response(function: &str) -> String {
    match function {
        "withdraw" => "1. Yes\n\
            2. The withdraw function sends tokens with an external call to `token.transfer` \
            before reducing the caller's balance, so a malicious token contract can re-enter \
            withdraw and drain the vault — a classic reentrancy flaw.\n\
            3. The withdraw function leads to complete loss of the vault's token reserves.\n\
            4. Update `balances[msg.sender]` before the external call, or guard the function \
            with a reentrancy lock."
            .into(),
        "sweep" => "1. Yes\n\
            2. The sweep function has no access control: any caller can invoke \
            `sweep(attackerAddress)` and move the vault's entire token balance to themselves.\n\
            3. The sweep function leads to theft of all pooled deposits by any user.\n\
            4. Restrict sweep to the owner, for example with an onlyOwner modifier."
            .into(),
        _ => "1. No".into(),
    }
}

#[test]
#[ignore = "writes fixtures/vaultdemo/cassette.txt; run on demand"]
fn regenerate_vaultdemo_cassette() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/vaultdemo");
    let project = load_project(&root, "contracts/Vault.sol", &[]).unwrap();
    let flat = flatten(&project).unwrap();
    let unit = parse(&flat.text).unwrap();
    let graph = build_fcg(&unit);
    let (ccls, diagnostics) = generate_all_ccls(&graph, &unit, "Vault", 7000);
    assert!(diagnostics.is_empty(), "{diagnostics:?}");
    let plan = plan_audit(&ccls, PromptMode::Caq, &[]).unwrap();

    let mut cassette = Cassette::default();
    cassette.model_tag = Some("gpt-4".into());
    cassette.capture_date = Some("2026-08-23".into());
    for instance in &plan {
        let request = LlmRequest::new(&instance.text, 0.0, 8000, "gpt-4");
        cassette
            .entries
            .insert(request.request_hash(), scripted_response(&instance.target.name));
    }
    assert_eq!(cassette.entries.len(), plan.len(), "hash collision in plan");
    cassette.save(&root.join("cassette.txt")).unwrap();
}

#[test]
#[ignore = "writes fixtures/golden/*_prompt.txt; run on demand"]
fn regenerate_golden_prompts() {
    use coaudit_core::ccl::{CodeCallList, CodeSegment, SegmentRole};
    use coaudit_core::parser::FunctionId;
    use coaudit_core::prompts::{render_caq, render_cwe, CweEntry};

    let target = FunctionId::new("C", "f", 0);
    let ccl = CodeCallList {
        target: target.clone(),
        segments: vec![CodeSegment {
            function_id: target,
            code: "function f() public {}".into(),
            role: SegmentRole::Target,
            depth: 0,
        }],
        token_estimate: 0,
        truncated: false,
        omitted: Vec::new(),
    };
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("caq_prompt.txt"), render_caq(&ccl).text).unwrap();
    std::fs::write(
        dir.join("cwe_prompt.txt"),
        render_cwe(&ccl, &CweEntry::new("VT-04", "reentrancy")).text,
    )
    .unwrap();
}
