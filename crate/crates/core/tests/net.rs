use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sst_core::hsi::{synthetic_cube, HsiCube};
use sst_core::net::layers::{is_shifted, nlsa_stage, rssb_forward, Linear, StageParams};
use sst_core::net::ops::{partition_index, relative_bias};
use sst_core::net::*;
use sst_core::tensor::{Tape, Tensor};
use sst_core::SeedStream;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = SeedStream::new(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_linear(tape: &mut Tape<f64>, cin: usize, cout: usize, seed: u64) -> Linear {
    Linear {
        weight: tape.constant(random(&[cin, cout], seed)),
        bias: tape.constant(random(&[cout], seed + 1)),
    }
}

fn random_attn(tape: &mut Tape<f64>, c: usize, seed: u64) -> AttnParams {
    AttnParams {
        q: random_linear(tape, c, c, seed),
        k: random_linear(tape, c, c, seed + 10),
        v: random_linear(tape, c, c, seed + 20),
        proj: random_linear(tape, c, c, seed + 30),
    }
}

fn identity_attn(tape: &mut Tape<f64>, c: usize) -> AttnParams {
    let mut eye = Tensor::zeros(&[c, c]);
    for i in 0..c {
        eye.data_mut()[i * c + i] = 1.0;
    }
    let lin = |t: &mut Tape<f64>| Linear { weight: t.constant(eye.clone()), bias: t.constant(Tensor::zeros(&[c])) };
    AttnParams { q: lin(tape), k: lin(tape), v: lin(tape), proj: lin(tape) }
}

fn tiny(bands: usize) -> SstConfig {
    SstConfig { channels: 8, heads: 2, window: 4, sstl_per_rssb: 2, rssb_count: 1, ..SstConfig::desk(bands) }
}

fn perturbed(config: &SstConfig, seed: u64) -> SstModel<f64> {
    check::perturbed_model(config, SeedStream::new(seed))
}

fn sizes() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (
        prop::sample::select(vec![8usize, 16, 32]),
        prop::sample::select(vec![8usize, 16, 32]),
        prop::sample::select(vec![2usize, 4, 8]),
        1usize..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_then_reverse_is_identity((h, w, m, c) in sizes(), seed in any::<u64>()) {
        let x = random(&[h, w, c], seed);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = window_partition(&mut tape, xv, m).unwrap();
        prop_assert_eq!(tape.shape(p), &[h * w / (m * m), m * m, c][..]);
        let r = window_reverse(&mut tape, p, h, w, m).unwrap();
        prop_assert_eq!(tape.value(r), &x);
    }

    #[test]
    fn inverse_shifts_cancel((h, w, _m, c) in sizes(), dy in -40isize..40, dx in -40isize..40, seed in any::<u64>()) {
        let x = random(&[h, w, c], seed);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let s = cyclic_shift(&mut tape, xv, dy, dx).unwrap();
        let r = cyclic_shift(&mut tape, s, -dy, -dx).unwrap();
        prop_assert_eq!(tape.value(r), &x);
    }
}

#[test]
fn partition_matches_direct_window_indexing() {
    let (h, w, c, m) = (8, 12, 3, 4);
    let x = random(&[h, w, c], 1);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = window_partition(&mut tape, xv, m).unwrap();
    let out = tape.value(p).data().to_vec();
    let nx = w / m;
    for wy in 0..h / m {
        for wx in 0..nx {
            for ty in 0..m {
                for tx in 0..m {
                    for ch in 0..c {
                        let got = out[(((wy * nx + wx) * m * m) + ty * m + tx) * c + ch];
                        let want = x.data()[((wy * m + ty) * w + wx * m + tx) * c + ch];
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }
    assert_eq!(partition_index(h, w, c, m).len(), h * w * c);
}

#[test]
fn nlsa_token_permutation_equivariance() {
    let (windows, t, c, heads) = (3, 16, 8, 2);
    let x = random(&[windows, t, c], 5);
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut SeedStream::new(6).rng());
    let mut permuted = x.clone();
    for wi in 0..windows {
        for (dst, &src) in perm.iter().enumerate() {
            for ch in 0..c {
                permuted.data_mut()[(wi * t + dst) * c + ch] = x.data()[(wi * t + src) * c + ch];
            }
        }
    }
    let mut tape = Tape::new();
    let p = random_attn(&mut tape, c, 7);
    let xv = tape.constant(x);
    let pv = tape.constant(permuted);
    let y = nlsa_forward(&mut tape, xv, &p, heads, None, None).unwrap();
    let yp = nlsa_forward(&mut tape, pv, &p, heads, None, None).unwrap();
    let (y, yp) = (tape.value(y).data(), tape.value(yp).data());
    for wi in 0..windows {
        for (dst, &src) in perm.iter().enumerate() {
            for ch in 0..c {
                let a = y[(wi * t + src) * c + ch];
                let b = yp[(wi * t + dst) * c + ch];
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn nlsa_two_token_hand_oracle() {
    let (a, b) = (0.3f64, -1.2f64);
    let mut tape = Tape::new();
    let p = identity_attn(&mut tape, 1);
    let x = tape.constant(Tensor::from_f64(&[1, 2, 1], &[a, b]).unwrap());
    let y = nlsa_forward(&mut tape, x, &p, 1, None, None).unwrap();
    let out = tape.value(y).data();
    for (i, &xi) in [a, b].iter().enumerate() {
        let (sa, sb) = ((xi * a).exp(), (xi * b).exp());
        let want = (sa * a + sb * b) / (sa + sb);
        assert!((out[i] - want).abs() < 1e-14, "token {i}: {} vs {want}", out[i]);
    }
}

#[test]
fn nlsa_rejects_bad_mask_shape() {
    let mut tape = Tape::new();
    let p = identity_attn(&mut tape, 2);
    let x = tape.constant(Tensor::zeros(&[2, 4, 2]));
    let mask = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
    assert!(nlsa_forward(&mut tape, x, &p, 1, None, Some(mask)).is_err());
}

#[test]
fn gsa_spatial_permutation_equivariance_and_attention_invariance() {
    let (h, w, c, heads) = (5, 6, 8, 2);
    let x = random(&[h, w, c], 11);
    let n = h * w;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut SeedStream::new(12).rng());
    let mut permuted = x.clone();
    for (dst, &src) in perm.iter().enumerate() {
        for ch in 0..c {
            permuted.data_mut()[dst * c + ch] = x.data()[src * c + ch];
        }
    }
    let mut tape = Tape::new();
    let p = random_attn(&mut tape, c, 13);
    let xv = tape.constant(x);
    let pv = tape.constant(permuted);
    let (y, a) = gsa_forward(&mut tape, xv, &p, heads).unwrap();
    let (yp, ap) = gsa_forward(&mut tape, pv, &p, heads).unwrap();
    assert_eq!(tape.shape(a), &[heads, c / heads, c / heads]);
    let max_attn = tape.value(a).max_abs_diff(tape.value(ap));
    assert!(max_attn < 1e-10, "attention changed by {max_attn}");
    let (y, yp) = (tape.value(y).data(), tape.value(yp).data());
    for (dst, &src) in perm.iter().enumerate() {
        for ch in 0..c {
            assert!((y[src * c + ch] - yp[dst * c + ch]).abs() < 1e-10);
        }
    }
}

#[test]
fn gsa_single_channel_is_pointwise_affine() {
    let mut tape = Tape::new();
    let p = random_attn(&mut tape, 1, 21);
    let w = |t: &Tape<f64>, l: &Linear| (t.value(l.weight).data()[0], t.value(l.bias).data()[0]);
    let (wv, bv) = w(&tape, &p.v);
    let (wp, bp) = w(&tape, &p.proj);
    let x = random(&[3, 4, 1], 22);
    let xv = tape.constant(x.clone());
    let (y, a) = gsa_forward(&mut tape, xv, &p, 1).unwrap();
    assert_eq!(tape.value(a).data(), &[1.0]);
    for (xi, yi) in x.data().iter().zip(tape.value(y).data()) {
        let want = (xi * wv + bv) * wp + bp;
        assert!((yi - want).abs() < 1e-14);
    }
}

#[test]
fn gsa_two_channel_hand_oracle() {
    let pixels = [[0.5, -0.25], [1.0, 0.75], [-0.5, 0.2]];
    let mut tape = Tape::new();
    let p = identity_attn(&mut tape, 2);
    let flat: Vec<f64> = pixels.iter().flatten().copied().collect();
    let x = tape.constant(Tensor::from_f64(&[1, 3, 2], &flat).unwrap());
    let (y, a) = gsa_forward(&mut tape, x, &p, 1).unwrap();

    let dot = |i: usize, j: usize| pixels.iter().map(|px| px[i] * px[j]).sum::<f64>() / 2f64.sqrt();
    let mut attn = [[0.0; 2]; 2];
    for i in 0..2 {
        let z: f64 = (0..2).map(|j| dot(i, j).exp()).sum();
        for j in 0..2 {
            attn[i][j] = dot(i, j).exp() / z;
        }
    }
    let got_a = tape.value(a).data();
    for i in 0..2 {
        for j in 0..2 {
            assert!((got_a[i * 2 + j] - attn[i][j]).abs() < 1e-14);
        }
    }
    let got = tape.value(y).data();
    for (pi, px) in pixels.iter().enumerate() {
        for i in 0..2 {
            let want = attn[i][0] * px[0] + attn[i][1] * px[1];
            assert!((got[pi * 2 + i] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn relative_bias_depends_only_on_displacement() {
    for m in [2usize, 3, 4] {
        let side = 2 * m - 1;
        let heads = 2;
        let table = Tensor::<f64>::from_f64(&[heads, side * side], &(0..heads * side * side).map(|i| i as f64).collect::<Vec<_>>())
            .unwrap();
        let mut tape = Tape::new();
        let tv = tape.constant(table);
        let b = relative_bias(&mut tape, tv, m).unwrap();
        let t = m * m;
        assert_eq!(tape.shape(b), &[heads, t, t]);
        let v = tape.value(b).data();
        for h in 0..heads {
            for i in 0..t {
                for j in 0..t {
                    for k in 0..t {
                        for l in 0..t {
                            let d1 = ((i / m) as isize - (j / m) as isize, (i % m) as isize - (j % m) as isize);
                            let d2 = ((k / m) as isize - (l / m) as isize, (k % m) as isize - (l % m) as isize);
                            let (a, bb) = (v[(h * t + i) * t + j], v[(h * t + k) * t + l]);
                            if d1 == d2 {
                                assert_eq!(a, bb);
                            } else {
                                assert_ne!(a, bb);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn zero_branches(model: &mut SstModel<f64>) {
    model.zero_where(is_branch_output);
}

#[test]
fn sstl_with_zero_branches_is_identity() {
    let config = tiny(3);
    let mut model = perturbed(&config, 31);
    zero_branches(&mut model);
    let x = random(&[8, 8, 8], 32);
    for shifted in [false, true] {
        let mut tape = Tape::new();
        let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
        let xv = tape.constant(x.clone());
        let y = sstl_forward(&mut tape, xv, &p.blocks[0].layers[0], &AttnContext::from(&config), shifted).unwrap();
        assert_eq!(tape.value(y), &x);
    }
}

#[test]
fn rssb_with_zero_branches_is_identity() {
    let config = tiny(3);
    let mut model = perturbed(&config, 33);
    zero_branches(&mut model);
    let x = random(&[8, 8, 8], 34);
    let mut tape = Tape::new();
    let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
    let xv = tape.constant(x.clone());
    let y = rssb_forward(&mut tape, xv, &p.blocks[0], &AttnContext::from(&config)).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn sst_with_zero_output_layers_is_identity() {
    for (config, h, w) in [(tiny(3), 8, 8), (tiny(5), 10, 13), (SstConfig::desk(4), 8, 8)] {
        let mut model = perturbed(&config, 35);
        zero_branches(&mut model);
        let x = random(&[h, w, config.bands], 36);
        let y = forward_tensor(&model, &x).unwrap();
        assert_eq!(y, x);

        let mut tail_only = perturbed(&config, 37);
        tail_only.zero_where(|n| n.starts_with("tail2."));
        assert_eq!(forward_tensor(&tail_only, &x).unwrap(), x);
    }
}

#[test]
fn shifted_layer_differs_from_unshifted() {
    let config = tiny(3);
    let model = perturbed(&config, 41);
    let x = random(&[8, 8, 8], 42);
    let mut tape = Tape::new();
    let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
    let xv = tape.constant(x);
    let StageParams::Nlsa { attn, bias_table } = p.blocks[0].layers[0].stages[0] else { panic!() };
    let ctx = AttnContext::from(&config);
    let a = nlsa_stage(&mut tape, xv, &attn, bias_table, &ctx, false).unwrap();
    let b = nlsa_stage(&mut tape, xv, &attn, bias_table, &ctx, true).unwrap();
    assert!(tape.value(a).max_abs_diff(tape.value(b)) > 1e-3);
    assert!(!is_shifted(0) && is_shifted(1) && !is_shifted(2));

    let unmasked = AttnContext { shift_mask: false, ..ctx };
    let c = nlsa_stage(&mut tape, xv, &attn, bias_table, &unmasked, true).unwrap();
    assert!(tape.value(b).max_abs_diff(tape.value(c)) > 1e-6);
}

#[test]
fn single_window_input_is_never_shifted() {
    let config = SstConfig { window: 8, ..tiny(3) };
    let model = perturbed(&config, 43);
    let x = random(&[8, 8, 8], 44);
    let mut tape = Tape::new();
    let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
    let xv = tape.constant(x);
    let StageParams::Nlsa { attn, bias_table } = p.blocks[0].layers[0].stages[0] else { panic!() };
    let ctx = AttnContext::from(&config);
    let a = nlsa_stage(&mut tape, xv, &attn, bias_table, &ctx, false).unwrap();
    let b = nlsa_stage(&mut tape, xv, &attn, bias_table, &ctx, true).unwrap();
    assert_eq!(tape.value(a), tape.value(b));
}

#[test]
fn every_attention_order_runs_and_counts_match() {
    for order in [
        AttentionOrder::NlsaGsa,
        AttentionOrder::GsaNlsa,
        AttentionOrder::NlsaOnly,
        AttentionOrder::GsaOnly,
        AttentionOrder::NlsaNlsa,
        AttentionOrder::GsaGsa,
    ] {
        let config = SstConfig { attention_order: order, ..tiny(3) };
        let model = SstModel::<f64>::init(&config, SeedStream::new(1)).unwrap();
        assert_eq!(model.param_count(), count_params(&config), "{order:?}");
        let mut tape = Tape::new();
        let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
        let x = tape.constant(random(&[12, 8, 3], 2));
        let y = sst_forward(&mut tape, x, &p, &config).unwrap();
        assert_eq!(tape.shape(y), &[12, 8, 3]);
        assert_eq!(tape.mac_count(), count_flops(&config, 12, 8).total(), "{order:?}");
    }
}

#[test]
fn param_count_matches_instantiated_models() {
    for config in [SstConfig::desk(4), SstConfig::desk(31), tiny(8), SstConfig { mlp_ratio: 2.0, ..tiny(3) }] {
        let model = SstModel::<f32>::init(&config, SeedStream::new(0)).unwrap();
        assert_eq!(model.param_count(), count_params(&config));
        let layout: usize = param_layout(&config).iter().map(|p| p.shape.iter().product::<usize>()).sum();
        assert_eq!(layout, count_params(&config));
    }
    let full = count_params(&SstConfig::full(31));
    assert!((3_500_000..=4_800_000).contains(&full), "{full}");
}

#[test]
fn flop_counter_matches_traced_macs_with_padding() {
    let config = SstConfig::desk(4);
    let model = SstModel::<f32>::init(&config, SeedStream::new(3)).unwrap();
    for (h, w) in [(8, 8), (10, 7), (16, 12)] {
        let mut tape = Tape::<f32>::new();
        let (p, _) = model.bind(&mut tape, Binding::Frozen).unwrap();
        let x = tape.constant(Tensor::zeros(&[h, w, 4]));
        sst_forward(&mut tape, x, &p, &config).unwrap();
        assert_eq!(tape.mac_count(), count_flops(&config, h, w).total(), "{h}x{w}");
    }
}

#[test]
fn flops_are_linear_in_pixels() {
    for config in [SstConfig::desk(4), SstConfig::full(31)] {
        for (h, w) in [(8, 8), (64, 64), (128, 96)] {
            let a = count_flops(&config, h, w);
            let b = count_flops(&config, 2 * h, w);
            assert_eq!(b.total(), 2 * a.total());
            assert_eq!(b.attention_order_terms, 2 * a.attention_order_terms);
        }
    }
}

#[test]
fn attention_terms_follow_window_and_channel_laws() {
    let base = SstConfig { window: 2, ..SstConfig::full(31) };
    let (h, w) = (64, 64);
    let px = (h * w) as u64;
    let layers = (base.rssb_count * base.sstl_per_rssb) as u64;
    for m in [2usize, 4, 8] {
        let cfg = SstConfig { window: m, ..base.clone() };
        let c = cfg.channels as u64;
        let want = layers * ((m * m) as u64 * px * c + c * c * px);
        assert_eq!(count_flops(&cfg, h, w).attention_order_terms, want);
    }
    let small = count_flops(&SstConfig { window: 2, ..base.clone() }, h, w);
    let large = count_flops(&SstConfig { window: 8, ..base.clone() }, h, w);
    assert_eq!(large.nlsa_core, 16 * small.nlsa_core);
    assert_eq!(large.gsa_core, small.gsa_core);

    let doubled = SstConfig { channels: 192, heads: 6, ..base.clone() };
    let (a, b) = (count_flops(&base, h, w), count_flops(&doubled, h, w));
    assert_eq!(b.gsa_core, 4 * a.gsa_core);
    assert_eq!(b.nlsa_core, 2 * a.nlsa_core);
    assert_eq!(b.mlp, 4 * a.mlp);
}

#[test]
fn doubling_channels_roughly_quadruples_parameters() {
    let a = count_params(&SstConfig::full(31));
    let b = count_params(&SstConfig { channels: 192, ..SstConfig::full(31) });
    let ratio = b as f64 / a as f64;
    assert!((3.5..4.0).contains(&ratio), "{ratio}");
}

#[test]
fn band_mismatch_is_a_dimension_error() {
    let model = SstModel::<f32>::init(&SstConfig::desk(4), SeedStream::new(0)).unwrap();
    let cube = synthetic_cube(8, 8, 5, SeedStream::new(1));
    assert!(matches!(denoise(&model, &cube), Err(NetError::Dimension(_))));
    assert!(matches!(denoise_tiled(&model, &cube, 64, 16), Err(NetError::Dimension(_))));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.sstm");
    let model = SstModel::<f32>::init(&SstConfig { attention_order: AttentionOrder::GsaNlsa, ..SstConfig::desk(5) }, SeedStream::new(4)).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(encode_checkpoint(&loaded), std::fs::read(&path).unwrap());
    assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(NetError::Io { .. })));
}

#[test]
fn tiling_single_tile_and_identity_model() {
    let config = SstConfig::desk(4);
    let model = SstModel::<f32>::init(&config, SeedStream::new(5)).unwrap();
    let cube = synthetic_cube(40, 36, 4, SeedStream::new(6));
    assert_eq!(denoise_tiled(&model, &cube, 64, 16).unwrap(), denoise(&model, &cube).unwrap());

    let mut identity = model.clone();
    identity.zero_where(|n| n.starts_with("tail2."));
    let big = synthetic_cube(96, 80, 4, SeedStream::new(7));
    let out = denoise_tiled(&identity, &big, 64, 16).unwrap();
    assert_eq!(out.data(), big.data());
}

#[test]
fn tiled_inference_is_deterministic() {
    let model = SstModel::<f32>::init(&SstConfig::desk(4), SeedStream::new(8)).unwrap();
    let cube: HsiCube = synthetic_cube(96, 96, 4, SeedStream::new(9));
    let a = denoise_tiled(&model, &cube, 64, 16).unwrap();
    let b = denoise_tiled(&model, &cube, 64, 16).unwrap();
    assert_eq!(a, b);
}

#[test]
fn network_gradients_match_finite_differences() {
    let config = SstConfig::desk(4);
    let components = check::all_network_components(&config, (8, 8), SeedStream::new(10));
    let report = sst_core::tensor::gradcheck::run_components(&components, 1e-5, 1e-4).unwrap();
    assert!(report.passed(), "{report}");
    let names: Vec<&str> = report.entries.iter().map(|e| e.name.as_str()).collect();
    assert!(names.contains(&"sst.params") && names.contains(&"gsa"));
}


#[test]
#[ignore = "exact count for the full config is about 1.15e12 multiply-accumulates, far from the reported 20.7 G"]
fn full_config_flops_match_reported_value() {
    let g = count_flops(&SstConfig::full(31), 512, 512).giga();
    assert!((g - 20.7).abs() <= 2.07, "{g}");
}
