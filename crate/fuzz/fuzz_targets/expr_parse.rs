#![no_main]

use libfuzzer_sys::fuzz_target;
use pathctl_cli::expr::{Allowed, Env, Expr};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(expr) = Expr::parse(text) else { return };
    let allowed = Allowed { dim: 2, history: true, control_dim: 2, y: true, z_dim: 2 };
    if expr.check(&allowed).is_ok() {
        let v = [0.5, -0.25];
        let env = Env { t: 0.5, x: &v, max: 0.5, int: 0.1, u: &v, y: 1.0, z: &v };
        let _ = expr.eval(&env);
    }
});
