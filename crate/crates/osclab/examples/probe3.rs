use osclab::func::GridFunction;
use osclab::ops::{calibrate, OpCtx, OperatorSpec};
use osclab::space::BallBasis;
use osclab::sparse::{construct_domination, verify_sparse};
use std::time::Instant;

fn main() {
    let depth = 12; // N = 4096
    let n = 1usize << depth;
    let basis = BallBasis::dyadic_martingale(depth, vec![1.0 / n as f64; n]).unwrap();
    let ctx = OpCtx::new(&basis);
    for op in [
        OperatorSpec::Maximal { m: 1, r: 1.0 },
        OperatorSpec::Hilbert { omega_exponent: 1.0 },
        OperatorSpec::CalderonCommutator,
    ] {
        let t0 = Instant::now();
        let calib = calibrate(&op, ctx, 200, 40, 12345).unwrap();
        let t_cal = t0.elapsed();
        let c_t = calib.c_t();
        let eta = 1.0 / (2.0 * basis.c0().powi(3));
        let mut max_const: f64 = 0.0;
        let mut fails = 0;
        let t1 = Instant::now();
        let seeds = 10u64;
        for s in 0..seeds {
            let mut rng = osclab::testfn::rng_for(777 + s, 0);
            let m = op.arity();
            let fvec = osclab::testfn::sample_vec(ctx.space, m, None, &mut rng);
            let frefs: Vec<&GridFunction> = fvec.iter().collect();
            match construct_domination(&op, &calib, ctx, &frefs, 0, None) {
                Ok(res) => {
                    let s1ok = verify_sparse(&basis, &res.s1, eta).0;
                    let s2ok = verify_sparse(&basis, &res.s2, eta).0;
                    if !s1ok || !s2ok { println!("  sparse check failed seed {s}"); fails += 1; }
                    max_const = max_const.max(res.pointwise_constant);
                }
                Err(e) => { println!("  abort seed {s}: {e}"); fails += 1; }
            }
        }
        println!(
            "{:?}: calib {:.2?} (c_T={:.3} gamma={:.3}), {} seeds in {:.2?}, max const {:.3} vs 50 c_T = {:.3}, fails {}",
            std::mem::discriminant(&op), t_cal, c_t, calib.gamma_norm_est, seeds, t1.elapsed(), max_const, 50.0 * c_t, fails
        );
    }
}
