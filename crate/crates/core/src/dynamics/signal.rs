use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;

/// Classic RK4 step of `ẋ = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(t, x)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(x, k)| x + 0.5 * dt * k).collect();
    let k2 = f(t + 0.5 * dt, &x2)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(x, k)| x + 0.5 * dt * k).collect();
    let k3 = f(t + 0.5 * dt, &x3)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(x, k)| x + dt * k).collect();
    let k4 = f(t + dt, &x4)?;
    Ok(x
        .iter()
        .enumerate()
        .map(|(i, x)| x + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Default internal RK4 step, 1 ms.
pub const DEFAULT_DT: f64 = 1e-3;

/// Integrates with RK4 at `dt_internal`, recording the state every
/// `sample_dt` seconds from `t = 0` up to `samples − 1` intervals.
///
/// Returns `(timestamps, states)`. `sample_dt` must be an integer multiple
/// of `dt_internal`.
pub fn rk4_sampled<F>(
    mut f: F,
    x0: &[f64],
    samples: usize,
    sample_dt: f64,
    dt_internal: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(dt_internal > 0.0 && sample_dt > 0.0) {
        return Err(Error::InvalidArgument("time steps must be positive".into()));
    }
    let ratio = sample_dt / dt_internal;
    let substeps = crate::math::round(ratio);
    if substeps < 1.0 || (ratio - substeps).abs() > 1e-9 * ratio {
        return Err(Error::InvalidArgument(alloc::format!(
            "internal step {dt_internal} does not divide the sample interval {sample_dt}"
        )));
    }
    let substeps = substeps as usize;
    let mut times = Vec::with_capacity(samples);
    let mut states = Vec::with_capacity(samples);
    let mut x = x0.to_vec();
    for s in 0..samples {
        let t0 = s as f64 * sample_dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(t0));
        }
        times.push(t0);
        states.push(x.clone());
        if s + 1 == samples {
            break;
        }
        for k in 0..substeps {
            x = rk4_step(&mut f, t0 + k as f64 * dt_internal, &x, dt_internal)?;
        }
    }
    Ok((times, states))
}

/// Integrates `ẋ = f(x)` from 0 to `t_end` and returns the sampled path
/// at `dt_internal` resolution (no decimation).
pub fn rk4_integrate<F>(mut f: F, x0: &[f64], t_end: f64, dt_internal: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let steps = crate::math::round(t_end / dt_internal) as usize;
    rk4_sampled(|_, x| Ok(f(x)), x0, steps + 1, dt_internal, dt_internal)
}

/// Adds i.i.d. `N(0, variance)` noise to every coordinate of every sample.
pub fn add_noise(states: &[Vec<f64>], variance: f64, r: &mut rng::StreamRng) -> Vec<Vec<f64>> {
    if variance == 0.0 {
        return states.to_vec();
    }
    let sd = crate::math::sqrt(variance);
    states
        .iter()
        .map(|s| s.iter().map(|v| v + sd * rng::normal(r)).collect())
        .collect()
}

/// Centered moving average of odd width `window`; near the ends the window
/// shrinks symmetrically so the filter stays zero-phase.
pub fn lowpass_filter(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "filter window must be odd and positive, got {window}"
        )));
    }
    let n = series.len();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let s: f64 = series[i - h..=i + h].iter().sum();
            s / (2 * h + 1) as f64
        })
        .collect())
}

/// Fourth-order central difference `(−f₊₂ + 8f₊₁ − 8f₋₁ + f₋₂) / (12 dt)`.
///
/// Returns estimates for indices `2..n−2` (the two samples at each end
/// have no full stencil).
pub fn central_diff4(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    if series.len() < 5 {
        return Err(Error::InvalidArgument(alloc::format!(
            "central_diff4 needs at least 5 samples, got {}",
            series.len()
        )));
    }
    let d = 12.0 * dt;
    Ok(series
        .windows(5)
        .map(|w| (-w[4] + 8.0 * w[3] - 8.0 * w[1] + w[0]) / d)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use alloc::vec;

    #[test]
    fn zero_field_is_constant() {
        let (_, xs) = rk4_integrate(|_| vec![0.0, 0.0], &[1.0, -2.0], 1.0, 1e-2).unwrap();
        assert!(xs.iter().all(|x| x == &vec![1.0, -2.0]));
    }

    #[test]
    fn exponential_decay() {
        let (ts, xs) = rk4_integrate(|x| vec![-x[0]], &[1.0], 1.0, 1e-3).unwrap();
        assert!((ts.last().unwrap() - 1.0).abs() < 1e-12);
        assert!((xs.last().unwrap()[0] - math::exp(-1.0)).abs() < 1e-9);
    }

    #[test]
    fn linear_system_spiral_decay() {
        let f = |x: &[f64]| crate::dynamics::f_linear(x).to_vec();
        let (_, xs) = rk4_integrate(f, &[1.0, 0.0], 12.0, 1e-3).unwrap();
        let r = math::norm2(xs.last().unwrap());
        assert!((r - math::exp(-0.2 * 12.0)).abs() < 1e-9);
        assert!((r - 0.0907).abs() < 1e-4);
    }

    #[test]
    fn sampled_grid_requires_divisible_step() {
        assert!(rk4_sampled(|_, x| Ok(x.to_vec()), &[1.0], 3, 0.01, 0.003).is_err());
        let (ts, _) = rk4_sampled(|_, x| Ok(x.to_vec()), &[1.0], 3, 0.01, 0.001).unwrap();
        assert_eq!(ts, vec![0.0, 0.01, 0.02]);
    }

    #[test]
    fn non_finite_state_aborts() {
        let r = rk4_sampled(|_, x| Ok(vec![x[0] * 1e300]), &[1e10], 10, 0.01, 1e-3);
        assert!(matches!(r, Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn filter_cases() {
        assert_eq!(lowpass_filter(&[2.0; 7], 5).unwrap(), vec![2.0; 7]);
        let s = [1.0, 4.0, -2.0, 0.5];
        assert_eq!(lowpass_filter(&s, 1).unwrap(), s.to_vec());
        let alt: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let f = lowpass_filter(&alt, 3).unwrap();
        for i in 1..5 {
            assert!((f[i].abs() - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(f[i].signum(), -alt[i].signum());
        }
        assert!(lowpass_filter(&s, 4).is_err());
    }

    #[test]
    fn diff4_polynomial_exactness() {
        let dt = 0.01;
        let ts: Vec<f64> = (0..=200).map(|i| i as f64 * dt).collect();
        let f: Vec<f64> = ts.iter().map(|t| t * t * t * t).collect();
        let d = central_diff4(&f, dt).unwrap();
        // index 100 in the series is t = 1
        assert!((d[100 - 2] - 4.0).abs() < 1e-9);
        let c = central_diff4(&[3.0; 9], dt).unwrap();
        assert!(c.iter().all(|v| *v == 0.0));
        assert!(central_diff4(&[1.0; 4], dt).is_err());
    }

    #[test]
    fn diff4_sine_truncation() {
        let dt = 0.01;
        let ts: Vec<f64> = (-2..=102).map(|i| i as f64 * dt).collect();
        let f: Vec<f64> = ts.iter().map(|t| math::sin(*t)).collect();
        let d = central_diff4(&f, dt).unwrap();
        let worst = d
            .iter()
            .zip(&ts[2..])
            .map(|(d, t)| (d - math::cos(*t)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn noise_statistics() {
        let zeros = vec![vec![0.0]; 100_000];
        let mut r = rng::stream(1, 0);
        let noisy = add_noise(&zeros, 1e-4, &mut r);
        let var = noisy.iter().map(|v| v[0] * v[0]).sum::<f64>() / noisy.len() as f64;
        assert!((var - 1e-4).abs() <= 0.05e-4, "{var}");
        let mut r2 = rng::stream(1, 0);
        assert_eq!(add_noise(&zeros[..5], 0.0, &mut r2), zeros[..5].to_vec());
        let mut r3 = rng::stream(2, 0);
        assert_ne!(add_noise(&zeros[..5], 1e-4, &mut r3), noisy[..5].to_vec());
    }
}
