use gbpc_core::control::{self, ControlSettings, Regularizer};
use gbpc_core::scenario::{random_instance, InstanceOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn settings() -> ControlSettings {
    ControlSettings::default()
}

#[test]
fn equivalence_chain_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = InstanceOptions::default();
    for k in 0..10 {
        let mut inst = random_instance(&mut rng, &opts).unwrap();
        if k % 2 == 1 {
            inst = inst.with_active_input_box(0.5, &settings()).unwrap();
        }
        let (pm, w, cp) = (&inst.predictor, &inst.w_ini, &inst.problem);
        let spc = control::spc(pm, w, cp, &settings()).unwrap();
        let ce = control::certainty_equivalence(pm, w, cp, &settings()).unwrap();
        assert!((&spc.u_f - &ce.u_f).amax() <= 1e-8);

        let lambda_g = 0.3;
        let dpc = control::deepc(&inst.data, w, cp, Regularizer::Proj2, lambda_g, &settings()).unwrap();
        let opt = control::optimistic(pm, w, cp, 2.0 * lambda_g / inst.data.cols() as f64, &settings()).unwrap();
        let du = (&dpc.u_f - &opt.u_f).amax();
        let dmu = (&dpc.y_pred.mean - &opt.y_pred.mean).amax();
        assert!(du <= 1e-5 && dmu <= 1e-5, "instance {k}: {du:.2e} {dmu:.2e}");

        let th = control::lambda_threshold(pm, cp).unwrap();
        let rob = control::robust(pm, w, cp, 1e10_f64.max(th.lambda_psd), &settings()).unwrap();
        assert!((&rob.u_f - &ce.u_f).amax() <= 1e-4);
    }
}

#[test]
fn lambda_sweep_approaches_certainty_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let inst = random_instance(&mut rng, &InstanceOptions::default()).unwrap();
    let (pm, w, cp) = (&inst.predictor, &inst.w_ini, &inst.problem);
    let ce = control::certainty_equivalence(pm, w, cp, &settings()).unwrap();
    let th = control::lambda_threshold(pm, cp).unwrap();
    let mut dist = Vec::new();
    for e in [0, 2, 4, 6, 8, 10] {
        let lambda = th.lambda_psd.max(1e-3) * 10f64.powi(e);
        let r = control::robust(pm, w, cp, lambda, &settings()).unwrap();
        dist.push((lambda, (&r.u_f - &ce.u_f).amax()));
    }
    // the trend is only reported; the limit is asserted
    println!("robust distance to CE over λ: {dist:?}");
    assert!(dist.last().unwrap().1 < 1e-4);
}
