use ntp_bench::{inputs, network};

#[test]
fn network_shape() {
    let net = network(3, 24, 0);
    assert_eq!(net.widths(), &[1, 24, 24, 24, 1]);
    assert_eq!(net.param_count(), 1273);
}

#[test]
fn inputs_span_interval() {
    let xs = inputs(5);
    assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    assert_eq!(inputs(1), vec![0.0]);
    assert!(inputs(0).is_empty());
}
