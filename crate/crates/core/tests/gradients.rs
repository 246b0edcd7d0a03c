mod common;

use common::{aniso, fd_gradient_check};
use speedfield::nn::MaskSpec;

#[test]
fn finite_differences_match_backprop_isotropic() {
    let r = fd_gradient_check(MaskSpec::Isotropic, 6, 1e-4);
    assert!(r.checked >= 30);
    assert!(
        r.worst_rel_err < 1e-4,
        "worst relative error {}",
        r.worst_rel_err
    );
}

#[test]
fn finite_differences_match_backprop_anisotropic() {
    let r = fd_gradient_check(aniso(10.0, 1.0), 6, 1e-4);
    assert!(r.checked >= 30);
    assert!(
        r.worst_rel_err < 1e-4,
        "worst relative error {}",
        r.worst_rel_err
    );
}
