//! SubInter module, SIL blocks and the full subband networks.

mod config;
mod network;

pub use config::{build_variant, BlockConfig, LayerInfo, ModelConfig, Variant, MODEL_KEYS};
pub use network::{
    forward_batch, forward_units, model_forward, prepare_units, sil_block, sil_block_forward, subinter, subinter_forward,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, ParamStore, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn subinter_params(d: usize, h: usize, seed: u64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        for (k, (name, din, dout)) in [("f", d, h), ("r", h, h), ("p", 2 * h, d)].into_iter().enumerate() {
            p.insert(format!("s.{name}.weight"), random(&[din, dout], seed * 10 + k as u64)).unwrap();
            p.insert(format!("s.{name}.bias"), random(&[dout], seed * 10 + 5 + k as u64)).unwrap();
        }
        p
    }

    #[test]
    fn zero_fusion_map_is_identity_bit_exact() {
        let mut p = subinter_params(4, 3, 1);
        for v in p.get_mut("s.p.weight").unwrap().data_mut() {
            *v = 0.0;
        }
        for v in p.get_mut("s.p.bias").unwrap().data_mut() {
            *v = 0.0;
        }
        let x = random(&[5, 4, 6], 2);
        assert_eq!(subinter_forward(&x, &p, "s").unwrap(), x);
    }

    #[test]
    fn all_maps_zero_is_identity() {
        let mut p = subinter_params(4, 3, 1);
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            p.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let x = random(&[3, 4, 2], 9);
        assert_eq!(subinter_forward(&x, &p, "s").unwrap(), x);
    }

    #[test]
    fn single_unit_uses_its_own_hidden_state_as_mean() {
        // F = 1: output = x + P([h, R(h)]), computed by hand from the pieces
        let p = subinter_params(3, 2, 4);
        let x = random(&[1, 3, 2], 5);
        let y = subinter_forward(&x, &p, "s").unwrap();
        let mut g = Graph::new();
        let xt = g.input(x.permuted(&[0, 2, 1]).unwrap());
        let fw = g.param(&p, "s.f.weight").unwrap();
        let fb = g.param(&p, "s.f.bias").unwrap();
        let h = g.affine(xt, fw, Some(fb)).unwrap();
        let rw = g.param(&p, "s.r.weight").unwrap();
        let rb = g.param(&p, "s.r.bias").unwrap();
        let glob = g.affine(h, rw, Some(rb)).unwrap();
        let cat = g.concat_last(h, glob).unwrap();
        let pw = g.param(&p, "s.p.weight").unwrap();
        let pb = g.param(&p, "s.p.bias").unwrap();
        let fused = g.affine(cat, pw, Some(pb)).unwrap();
        let out = g.add(xt, fused).unwrap();
        let expect = g.value(out).permuted(&[0, 2, 1]).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn permutation_equivariance() {
        let p = subinter_params(4, 3, 7);
        let x = random(&[4, 4, 3], 8);
        let perm = [2, 0, 3, 1];
        let permute_units = |t: &Tensor<f64>| {
            let unit = t.len() / 4;
            let mut data = Vec::with_capacity(t.len());
            for &i in &perm {
                data.extend_from_slice(&t.data()[i * unit..(i + 1) * unit]);
            }
            Tensor::new(t.shape().to_vec(), data).unwrap()
        };
        let a = permute_units(&subinter_forward(&x, &p, "s").unwrap());
        let b = subinter_forward(&permute_units(&x), &p, "s").unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    fn toyish(variant: Variant) -> ModelConfig {
        ModelConfig { n: 2, subinter_hidden: [6, 8], lstm_hidden: 12, win_len: 16, hop: 8, ..ModelConfig::toy(variant) }
    }

    #[test]
    fn sil_block_without_subinter_and_zero_lstm_gives_beta() {
        let cfg = toyish(Variant::SubbandBaseline);
        let mut p: ParamStore<f64> = cfg.init_params(3).unwrap();
        for name in ["block1.lstm.w_ih", "block1.lstm.w_hh", "block1.lstm.bias"] {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let beta = Tensor::from_fn(&[12], |i| i as f64 * 0.1);
        *p.get_mut("block1.gnorm.beta").unwrap() = beta.clone();
        let y = sil_block_forward(&random(&[9, 5, 4], 1), &p, &cfg, 0).unwrap();
        assert_eq!(y.shape(), &[9, 12, 4]);
        for f in 0..9 {
            for c in 0..12 {
                for t in 0..4 {
                    assert_eq!(y.data()[(f * 12 + c) * 4 + t], beta.data()[c]);
                }
            }
        }
    }

    #[test]
    fn identical_units_give_identical_outputs() {
        let cfg = toyish(Variant::InterSubNet);
        let p: ParamStore<f64> = cfg.init_params(5).unwrap();
        let one = random(&[1, 5, 4], 6);
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(one.data());
        }
        let x = Tensor::new(vec![3, 5, 4], data).unwrap();
        let y = sil_block_forward(&x, &p, &cfg, 0).unwrap();
        let unit = y.len() / 3;
        assert_eq!(&y.data()[..unit], &y.data()[unit..2 * unit]);
        assert_eq!(&y.data()[..unit], &y.data()[2 * unit..]);
    }

    #[test]
    fn output_shape_contract() {
        let cfg = toyish(Variant::InterSubNet);
        let p: ParamStore<f32> = cfg.init_params(2).unwrap();
        let mag = Tensor::from_fn(&[9, 7], |i| (i % 5) as f32 + 0.5);
        let m = model_forward(&mag, &cfg, &p).unwrap();
        assert_eq!((m.bins(), m.frames()), (9, 7));
        assert_eq!(m.real.len(), 63);
        let small = Tensor::<f32>::zeros(&[4, 7]);
        assert!(model_forward(&small, &cfg, &p).is_err());
    }

    #[test]
    fn full_size_first_block_shape() {
        let cfg = ModelConfig::full(Variant::InterSubNet);
        let p: ParamStore<f32> = cfg.init_params(0).unwrap();
        let x = Tensor::from_fn(&[257, 31, 2], |i| (i % 7) as f32 * 0.1);
        let y = sil_block_forward(&x, &p, &cfg, 0).unwrap();
        assert_eq!(y.shape(), &[257, 384, 2]);
    }

    /// Changing bins outside unit f's window reaches frequency f only through the SubInter mean.
    #[test]
    fn cross_band_information_flows_only_through_subinter() {
        for (variant, expect_change) in [(Variant::SubbandBaseline, false), (Variant::InterSubNet, true)] {
            let cfg = toyish(variant);
            let p: ParamStore<f64> = cfg.init_params(11).unwrap();
            let mag = random(&[9, 4], 12).map(f64::abs);
            let mut other = mag.clone();
            for v in &mut other.data_mut()[6 * 4..7 * 4] {
                *v += 3.0;
            }
            let run = |m: &Tensor<f64>| {
                let units = crate::subband::unfold(m, cfg.n, cfg.boundary).unwrap();
                let mut g = Graph::new();
                let u = g.input(units.into_tensor().reshaped(vec![1, 9, 5, 4]).unwrap());
                let out = forward_units(&mut g, &p, &cfg, u).unwrap();
                g.value(out).clone()
            };
            let (a, b) = (run(&mag), run(&other));
            // unit 1 covers bins 8, 0, 1, 2, 3 and never sees bin 6
            let at_bin1 = |t: &Tensor<f64>| -> Vec<f64> {
                (0..2).flat_map(|plane| (0..4).map(move |tt| (plane, tt))).map(|(pl, tt)| t.data()[(pl * 9 + 1) * 4 + tt]).collect()
            };
            let diff = at_bin1(&a).iter().zip(at_bin1(&b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert_eq!(diff > 1e-9, expect_change, "{variant}: diff {diff}");
        }
    }
}
