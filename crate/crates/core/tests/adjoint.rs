use mmtopo::sensitivity::check_gradients;

#[test]
fn linear_adjoint_matches_finite_differences() {
    let r = check_gradients(50, 1, false, 0.3).unwrap();
    println!("{r:?}");
    assert!(r.max_relative_error <= 1e-4);
}

#[test]
fn nonlinear_adjoint_matches_finite_differences() {
    let r = check_gradients(50, 1, true, 0.3).unwrap();
    println!("{r:?}");
    assert!(r.max_relative_error <= 1e-3);
}
