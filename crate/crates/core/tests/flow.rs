use proptest::prelude::*;
use ucm_core::diffusion::codec::{Codec, CodecConfig};
use ucm_core::diffusion::sample::{euler_sample, OracleVelocity, VelocityField};
use ucm_core::diffusion::{forward_process, velocity_target, DiffusionState};

fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-4.0f64..4.0, n), prop::collection::vec(-4.0f64..4.0, n))
}

proptest! {
    #[test]
    fn endpoints_are_exact((x0, x1) in vecs(17)) {
        prop_assert_eq!(forward_process(&x0, &x1, 0.0).unwrap(), x0.clone());
        prop_assert_eq!(forward_process(&x0, &x1, 1.0).unwrap(), x1.clone());
        let mid = forward_process(&x0, &x1, 0.5).unwrap();
        for i in 0..x0.len() {
            prop_assert_eq!(mid[i], 0.5 * x0[i] + 0.5 * x1[i]);
        }
    }

    #[test]
    fn path_moves_along_target_velocity((x0, x1) in vecs(9), t in 0.0f64..1.0, dt in 0.0f64..1.0) {
        let s = t * (1.0 - dt);
        let a = forward_process(&x0, &x1, s).unwrap();
        let b = forward_process(&x0, &x1, t).unwrap();
        let v = velocity_target(&x0, &x1);
        for i in 0..v.len() {
            prop_assert!((b[i] - a[i] - (t - s) * v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_with_oracle_reaches_data((x0, x1) in vecs(12), steps in 1usize..40) {
        let mut field = OracleVelocity::new(&x0, &x1);
        let out = euler_sample(&mut field, x0.clone(), steps).unwrap();
        for i in 0..x1.len() {
            prop_assert!((out[i] - x1[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn codec_decode_is_adjoint(seed in 0u64..50, len in 1usize..4) {
        let codec = Codec::new(CodecConfig { patch: 4, temporal_stride: 1, seed }).unwrap();
        let frames: Vec<Vec<f64>> = (0..len)
            .map(|f| (0..16 * 8 * 3).map(|i| (((i * 31 + f * 7 + seed as usize) % 97) as f64 / 48.0) - 1.0).collect())
            .collect();
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        let lat = codec.encode(&refs, 16, 8).unwrap();
        let back = codec.decode(&lat).unwrap();
        prop_assert_eq!(back.len(), len);
        for (a, b) in frames.iter().zip(&back) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn state_carries_target() {
    let s = DiffusionState::new(vec![1.0, 2.0], vec![3.0, -1.0], 0.25).unwrap();
    assert_eq!(s.vt, [2.0, -3.0]);
    assert_eq!(s.xt, [1.5, 1.25]);
    assert!(DiffusionState::new(vec![1.0], vec![1.0], -0.1).is_err());
}

#[test]
fn oracle_velocity_is_constant() {
    let mut f = OracleVelocity::new(&[0.0, 1.0], &[1.0, 3.0]);
    assert_eq!(f.velocity(&[9.0, 9.0], 0.3).unwrap(), f.velocity(&[0.0, 0.0], 0.9).unwrap());
}
