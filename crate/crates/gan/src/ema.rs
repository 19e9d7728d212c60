use dusty_tensor::ParamSet;

use crate::error::{GanError, Result};

/// `ema ← decay·ema + (1 − decay)·live`, per parameter.
pub fn ema_update(ema: &mut ParamSet, live: &ParamSet, decay: f32) -> Result<()> {
    if !ema.same_layout(live) {
        return Err(GanError::Shape("EMA and live parameter sets differ".into()));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(GanError::Config(format!("EMA decay {decay} outside [0, 1]")));
    }
    for ((_, e), (_, l)) in ema.iter_mut().zip(live.iter()) {
        for (ev, &lv) in e.data_mut().iter_mut().zip(l.data()) {
            *ev = decay * *ev + (1.0 - decay) * lv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dusty_tensor::{rng::stream, ParamRole, Tensor};

    fn set(seed: u64) -> ParamSet {
        let mut p = ParamSet::new(ParamRole::Generator);
        p.insert("a", Tensor::randn([3, 2], &mut stream(seed, "p"))).unwrap();
        p.insert("b", Tensor::randn([4], &mut stream(seed, "q"))).unwrap();
        p
    }

    #[test]
    fn decay_endpoints() {
        let live = set(1);
        let mut e = set(2);
        ema_update(&mut e, &live, 0.0).unwrap();
        assert_eq!(e, live);
        let mut e = set(2);
        ema_update(&mut e, &live, 1.0).unwrap();
        assert_eq!(e, set(2));
    }

    #[test]
    fn geometric_convergence() {
        let live = set(1);
        let mut e = set(2);
        let decay = 0.9f32;
        let start: f64 = max_gap(&e, &live);
        for n in 1..=50 {
            ema_update(&mut e, &live, decay).unwrap();
            let bound = start * (decay as f64).powi(n) * 1.001 + 1e-5;
            assert!(max_gap(&e, &live) <= bound, "step {n}");
        }
    }

    #[test]
    fn drift_bounded_by_step_sizes() {
        // live moves by at most `step` per update; the EMA lags by at most
        // step·decay/(1−decay), which the sum of step sizes also bounds
        let decay = 0.99f32;
        let step = 0.01f32;
        let mut live = set(3);
        let mut e = live.clone();
        let mut travelled = 0.0f64;
        for _ in 0..300 {
            for (_, t) in live.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v += step);
            }
            travelled += step as f64;
            ema_update(&mut e, &live, decay).unwrap();
            assert!(max_gap(&e, &live) <= travelled + 1e-6);
            assert!(max_gap(&e, &live) <= (step * decay / (1.0 - decay)) as f64 + 1e-4);
        }
    }

    #[test]
    fn mismatched_sets_rejected() {
        let mut e = set(1);
        let mut other = ParamSet::new(ParamRole::Generator);
        other.insert("a", Tensor::zeros([3, 2])).unwrap();
        assert!(matches!(ema_update(&mut e, &other, 0.5), Err(GanError::Shape(_))));
    }

    fn max_gap(a: &ParamSet, b: &ParamSet) -> f64 {
        a.iter()
            .zip(b.iter())
            .flat_map(|((_, x), (_, y))| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs() as f64))
            .fold(0.0, f64::max)
    }
}
