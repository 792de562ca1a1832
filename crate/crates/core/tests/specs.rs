//! The bundled spec files: parsing, round trips, lints and static analysis.

use iconfluence::confluence::{check_dynamic, classify_transaction, dynamic::Outcome};
use iconfluence::workload::{parse_spec, serialize_spec, validate_spec, WorkloadSpec};
use iconfluence::Error;
use std::collections::BTreeSet;

fn bundled(name: &str) -> WorkloadSpec {
    let path = format!("{}/specs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap();
    parse_spec(&text).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Transaction name -> invariants it must coordinate on.
fn flagged(spec: &WorkloadSpec) -> Vec<(String, BTreeSet<String>)> {
    let w = spec.build().unwrap();
    w.bodies()
        .iter()
        .map(|t| {
            let r = classify_transaction(t, &spec.invariants, Some(&spec.schema));
            let offending = r.offending_invariants().into_iter().map(String::from).collect();
            (t.name.clone(), offending)
        })
        .collect()
}

#[test]
fn bundled_specs_round_trip() {
    for name in ["payroll", "bank", "tpcc"] {
        let spec = bundled(name);
        let again = parse_spec(&serialize_spec(&spec)).unwrap();
        assert_eq!(spec, again, "{name}");
    }
}

#[test]
fn bundled_specs_lint_clean_except_uncovered_stock() {
    for name in ["payroll", "bank"] {
        assert_eq!(validate_spec(&bundled(name)), Vec::<String>::new(), "{name}");
    }
    // No TPC-C consistency condition constrains stock quantities.
    assert_eq!(
        validate_spec(&bundled("tpcc")),
        vec!["transaction `new-order` writes `stock`, which no invariant covers".to_string()]
    );
}

#[test]
fn payroll_flags_only_hiring_with_chosen_ids() {
    let f = flagged(&bundled("payroll"));
    let expect = |n: &str| f.iter().find(|(t, _)| t == n).unwrap().1.clone();
    assert_eq!(expect("hire-with-id"), BTreeSet::from(["unique-employee-id".to_string()]));
    assert!(expect("hire-with-nonce").is_empty());
    // Deleting an employee is safe: nothing references employees.
    assert!(expect("remove-employee").is_empty());
}

#[test]
fn bank_flags_only_withdrawals() {
    let f = flagged(&bundled("bank"));
    assert!(f[0].1.is_empty(), "{f:?}");
    assert_eq!(f[1].0, "withdraw");
    assert!(!f[1].1.is_empty());
}

#[test]
fn tpcc_spec_flags_only_the_order_id_conditions() {
    for (t, inv) in flagged(&bundled("tpcc")) {
        assert!(inv.iter().all(|i| i.starts_with("c2-") || i.starts_with("c3-")), "{t}: {inv:?}");
        match t.as_str() {
            "new-order" => assert!(!inv.is_empty()),
            "payment" => assert!(inv.is_empty()),
            _ => {}
        }
    }
}

#[test]
fn payroll_uniqueness_counterexample_and_bank_overdraft_are_found() {
    let payroll = bundled("payroll").build().unwrap();
    let v = check_dynamic(&payroll, 1000, 2, 7).unwrap();
    assert_eq!(v.outcome, Outcome::CounterexampleFound);
    assert!(v.counterexample.unwrap().witness.to_string().contains("unique-employee-id"));
    let bank = bundled("bank").build().unwrap();
    assert_eq!(check_dynamic(&bank, 1000, 2, 7).unwrap().outcome, Outcome::CounterexampleFound);
}

#[test]
fn unresolved_references_are_all_reported() {
    let text = r#"
        [schema.emp]
        key = ["name"]
        fields = ["dept"]

        [[invariants]]
        name = "fk"
        class = "foreign-key"
        from = { table = "emp", fields = ["dept"] }
        to = { table = "dept", fields = ["id"] }

        [[invariants]]
        name = "u"
        class = "uniqueness"
        table = "emp"
        field = "salary"
    "#;
    let Err(Error::Spec(errs)) = parse_spec(text) else {
        panic!("expected resolution errors");
    };
    assert!(errs.iter().any(|e| e.contains("dept")), "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("salary")), "{errs:?}");
}

#[test]
fn syntax_errors_carry_locations() {
    let Err(Error::Spec(errs)) = parse_spec("[schema.emp\nkey = 1") else {
        panic!("expected a syntax error");
    };
    assert!(errs[0].contains("line 1"), "{errs:?}");
}

#[test]
fn initial_state_must_be_valid() {
    let text = r#"
        [schema.emp]
        key = ["name"]
        fields = ["id"]

        [[invariants]]
        name = "u"
        class = "uniqueness"
        table = "emp"
        field = "id"

        [[initial-state]]
        table = "emp"
        fields = { name = "a", id = 1 }

        [[initial-state]]
        table = "emp"
        fields = { name = "b", id = 1 }
    "#;
    let Err(Error::Spec(errs)) = parse_spec(text) else {
        panic!("expected an invalid initial state");
    };
    assert!(errs.iter().any(|e| e.contains("initial-state")), "{errs:?}");
}

#[test]
fn lint_reports_unexercised_invariants_and_undeclared_writes() {
    let text = r#"
        [schema.a]
        key = ["k"]
        fields = ["x"]

        [schema.b]
        key = ["k"]
        fields = ["x"]

        [[invariants]]
        name = "a-unique"
        class = "uniqueness"
        table = "a"
        field = "x"

        [[transactions]]
        name = "write-b"
        writes = ["a"]
        ops = [{ op = "insert", table = "b", fields = { k = 1, x = 1 } }]
    "#;
    let lints = validate_spec(&parse_spec(text).unwrap());
    assert!(lints.iter().any(|l| l.contains("never exercised")), "{lints:?}");
    assert!(lints.iter().any(|l| l.contains("outside its declared write set")), "{lints:?}");
    assert!(lints.iter().any(|l| l.contains("no invariant covers")), "{lints:?}");
}
