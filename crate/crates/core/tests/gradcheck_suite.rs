use skinmtl::gradcheck::{faulty_case, GradCase, GradCheck, DEFAULT_TOLERANCE};
use skinmtl::{nn, Tensor};

#[test]
fn full_suite_passes() {
    let report = GradCheck::standard(0).run().unwrap();
    for op in &report.ops {
        println!("{:<28} instances {:>2}  elements {:>5}  max rel err {:.3e}", op.op, op.instances, op.elements_checked, op.max_rel_error);
        assert!(op.instances >= 10);
    }
    let failed: Vec<_> = report.failures().map(|o| o.op.clone()).collect();
    assert!(failed.is_empty(), "failing ops: {failed:?}");
    assert_eq!(report.tolerance, DEFAULT_TOLERANCE);
}

#[test]
fn report_is_deterministic_per_seed() {
    let mut a = GradCheck::standard(5);
    a.retain(|n| n.starts_with("conv2d") || n == "bce_loss");
    let mut b = GradCheck::standard(5);
    b.retain(|n| n.starts_with("conv2d") || n == "bce_loss");
    let (ra, rb) = (a.run().unwrap(), b.run().unwrap());
    for (x, y) in ra.ops.iter().zip(&rb.ops) {
        assert_eq!(x.max_rel_error.to_bits(), y.max_rel_error.to_bits());
    }
}

#[test]
fn corrupted_gradient_named_in_failures() {
    let mut gc = GradCheck::standard(0);
    gc.retain(|n| n == "add");
    gc.add_case(faulty_case());
    let report = gc.run().unwrap();
    let failed: Vec<_> = report.failures().map(|o| o.op.as_str()).collect();
    assert_eq!(failed, ["faulty_scale"]);
}

fn relu_case(name: &str, at: f64) -> GradCase {
    GradCase::new(name, move |_| vec![Tensor::new(&[6], at).unwrap()], |g, n| nn::relu(g, n[0]))
}

#[test]
fn kinks_are_redrawn_and_never_pass() {
    let mut gc = GradCheck::empty(0);
    gc.add_case(relu_case("relu_at_kink", 0.0));
    gc.add_case(relu_case("relu_smooth", 0.5));
    let report = gc.run().unwrap();
    let (kink, smooth) = (&report.ops[0], &report.ops[1]);
    assert!(!kink.passed);
    assert_eq!(kink.instances, 0);
    assert!(kink.redrawn > 0);
    assert!(smooth.passed);
    assert_eq!((smooth.instances, smooth.redrawn), (10, 0));
}
