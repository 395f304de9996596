//! A corrupted Chen fold must be caught by the Chen criterion alone. This is
//! its own test binary because the fault switch is process-wide.

use hypodense::roughlift::set_chen_fault;
use hypodense_cli::verify::{run_criterion, FAST};

#[test]
fn corrupted_fold_fails_only_the_chen_criterion() {
    set_chen_fault(true);
    let outcomes: Vec<_> = FAST.iter().map(|&id| run_criterion(id, 0).unwrap()).collect();
    set_chen_fault(false);
    for o in &outcomes {
        println!("{}", o.line());
        assert_eq!(o.passed, o.id != 2, "criterion {}: {}", o.id, o.detail);
    }
    assert!(run_criterion(2, 0).unwrap().passed);
}
