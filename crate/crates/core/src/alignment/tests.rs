use super::*;
use crate::extractor::{build_inputs, extract_pyramid, ExtractorConfig, ExtractorParams, FeaturePyramid};
use crate::numerics::{resize, unfold, ResizeMode, Tensor};
use crate::pyramid::{Pyramid, Scale};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn emb(rows: Tensor) -> PatchEmbedding {
    let n = rows.shape()[0];
    let grid = GridMeta::new(1, 1, n, 1, 1, 0).unwrap();
    PatchEmbedding::new(rows, grid, false).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn textured(h: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let coarse = Tensor::rand_uniform(&[1, h / 2, h / 2], -1.0, 1.0, &mut r);
    let noise = Tensor::rand_uniform(&[1, h, h], -0.3, 0.3, &mut r);
    resize(&coarse, h, h, ResizeMode::Bilinear).unwrap().add(&noise).unwrap()
}

fn small_extractor(seed: u64) -> ExtractorParams {
    ExtractorParams::new(ExtractorConfig { image_channels: 1, c4: 8, c2: 12, c1: 16 }, &mut rng(seed))
}

fn interior(grid: &GridMeta) -> Vec<usize> {
    let mut v = Vec::new();
    for r in 1..grid.gh - 1 {
        for c in 1..grid.gw - 1 {
            v.push(r * grid.gw + c);
        }
    }
    v
}

fn identity_fraction(idx: &[usize], cells: &[usize]) -> f64 {
    cells.iter().filter(|&&i| idx[i] == i).count() as f64 / cells.len() as f64
}

// ---- word_embed ----

#[test]
fn embed_patch_one_gives_pixel_rows() {
    let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let e = word_embed(&x, 1, 1, 0, None).unwrap();
    assert_eq!(e.rows.shape(), &[4, 1]);
    assert_eq!(e.rows.data(), &[1.0, 2.0, 3.0, 4.0]);
    assert!(!e.projected);
}

#[test]
fn identity_projection_is_plain_unfold() {
    let x = Tensor::rand_uniform(&[2, 5, 5], -1.0, 1.0, &mut rng(1));
    let (plain, _) = unfold(&x, 3, 1, 1).unwrap();
    let e = word_embed(&x, 3, 1, 1, Some(&Projection::identity(18))).unwrap();
    assert!(e.projected);
    assert_eq!(e.rows, plain);
}

#[test]
fn random_projection_matches_row_oracle() {
    let mut r = rng(2);
    let x = Tensor::rand_uniform(&[2, 6, 5], -1.0, 1.0, &mut r);
    let p = Projection::new(Tensor::rand_uniform(&[7, 18], -1.0, 1.0, &mut r), Tensor::rand_uniform(&[7], -1.0, 1.0, &mut r))
        .unwrap();
    let e = word_embed(&x, 3, 1, 1, Some(&p)).unwrap();
    let (plain, _) = unfold(&x, 3, 1, 1).unwrap();
    for i in 0..plain.shape()[0] {
        for o in 0..7 {
            let want = dot(p.weight.row(o), plain.row(i)) + p.bias.data()[o];
            assert!((e.rows.get(&[i, o]) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn normalized_rows_have_cosine_logits() {
    let mut r = rng(3);
    let mut rows = Tensor::rand_uniform(&[5, 8], -1.0, 1.0, &mut r);
    rows.data_mut()[8..16].iter_mut().for_each(|v| *v = 0.0);
    let e = emb(rows.clone());
    let n = e.normalized(0.1);
    for i in 0..5 {
        for j in 0..5 {
            let (a, b) = (rows.row(i), rows.row(j));
            let na = dot(a, a).sqrt();
            let nb = dot(b, b).sqrt();
            let want = if na == 0.0 || nb == 0.0 { 0.0 } else { dot(a, b) / (na * nb) / 0.1 };
            let got = dot(n.rows.row(i), n.rows.row(j)) / 8f64.sqrt();
            assert!((got - want).abs() < 1e-9);
        }
    }
}

#[test]
fn ridge_fit_recovers_affine_map() {
    let mut r = rng(4);
    let x = Tensor::rand_uniform(&[200, 6], -1.0, 1.0, &mut r);
    let truth = Projection::new(Tensor::rand_uniform(&[3, 6], -1.0, 1.0, &mut r), Tensor::new(&[3], vec![0.5, -0.2, 1.0]).unwrap())
        .unwrap();
    let y = truth.apply(&x).unwrap();
    let fit = Projection::fit_ridge(&x, &y, 1e-10).unwrap();
    assert!(fit.weight.max_abs_diff(&truth.weight) < 1e-6);
    assert!(fit.bias.max_abs_diff(&truth.bias) < 1e-6);
    assert!(Projection::fit_ridge(&x, &y, 0.0).is_err());
}

// ---- correlate / hard_match / brute force ----

#[test]
fn query_equal_to_key_dominates() {
    let q = emb(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
    let k = emb(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let c = correlate(&q, &k).unwrap();
    assert!(c.scores.get(&[0, 0]) > 0.5);
    assert_eq!(hard_match(&c).idx, vec![0]);
}

#[test]
fn zero_embeddings_correlate_uniformly() {
    let c = correlate(&emb(Tensor::zeros(&[3, 4])), &emb(Tensor::zeros(&[5, 4]))).unwrap();
    assert!(c.scores.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn correlate_rejects_dim_mismatch() {
    let err = correlate(&emb(Tensor::zeros(&[3, 4])), &emb(Tensor::zeros(&[3, 5]))).unwrap_err();
    assert!(matches!(err, crate::Error::Dimension(_)));
}

#[test]
fn correlate_argmax_follows_raw_inner_products() {
    let mut r = rng(5);
    for _ in 0..20 {
        let q = Tensor::rand_uniform(&[40, 9], -1.0, 1.0, &mut r);
        let k = Tensor::rand_uniform(&[300, 9], -1.0, 1.0, &mut r);
        let c = correlate(&emb(q.clone()), &emb(k.clone())).unwrap();
        for i in 0..40 {
            let raw: Vec<f64> = (0..300).map(|j| dot(q.row(i), k.row(j))).collect();
            let best = (0..300).fold(0, |b, j| if raw[j] > raw[b] { j } else { b });
            assert_eq!(hard_match(&c).idx[i], best);
        }
    }
}

#[test]
fn hard_match_identity_and_ties() {
    let grid = GridMeta::new(1, 1, 3, 1, 1, 0).unwrap();
    let c = CorrelationMatrix {
        scores: Tensor::new(&[3, 3], vec![0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8]).unwrap(),
        query_grid: grid,
        key_grid: grid,
    };
    assert_eq!(hard_match(&c).idx, vec![0, 1, 2]);
    let u = CorrelationMatrix { scores: Tensor::full(&[3, 3], 1.0 / 3.0), ..c };
    assert_eq!(hard_match(&u).idx, vec![0, 0, 0]);
}

#[test]
fn hard_match_equals_linear_scan() {
    let mut r = rng(6);
    let grid = GridMeta::new(1, 1, 20, 1, 1, 0).unwrap();
    let scores = Tensor::from_fn(&[20, 20], |_| r.gen_range(0..5) as f64);
    let c = CorrelationMatrix { scores: scores.clone(), query_grid: grid, key_grid: grid };
    let m = hard_match(&c);
    for i in 0..20 {
        let mut best = 0;
        for j in 0..20 {
            if scores.get(&[i, j]) > scores.get(&[i, best]) {
                best = j;
            }
        }
        assert_eq!(m.idx[i], best);
    }
}

#[test]
fn brute_force_examples() {
    let k = Tensor::identity(4);
    let q = Tensor::new(&[1, 4], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    assert_eq!(brute_force_match(&q, &k).unwrap().idx, vec![2]);
    let same = Tensor::full(&[6, 4], 0.5);
    let q = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng(7));
    assert_eq!(brute_force_match(&q, &same).unwrap().idx, vec![0, 0, 0]);
}

#[test]
fn permuting_keys_permutes_matches() {
    let mut r = rng(8);
    // stride = patch: every pixel belongs to exactly one patch
    let keys_img = Tensor::rand_uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
    let q_img = Tensor::rand_uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
    let k = word_embed(&keys_img, 2, 2, 0, None).unwrap();
    let q = word_embed(&q_img, 2, 2, 0, None).unwrap();
    let n = k.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let permuted = crate::autodiff::gather_rows(&k.rows, &perm).unwrap();
    let before = hard_match(&correlate(&q, &k).unwrap());
    let after = hard_match(&correlate(&q, &PatchEmbedding::new(permuted, k.grid, false).unwrap()).unwrap());
    for i in 0..q.len() {
        assert_eq!(perm[after.idx[i]], before.idx[i]);
    }
}

proptest! {
    #[test]
    fn correlation_rows_are_distributions(seed in 0u64..1000, nq in 1usize..30, nk in 1usize..300, d in 1usize..12) {
        let mut r = rng(seed);
        let q = Tensor::rand_uniform(&[nq, d], -3.0, 3.0, &mut r);
        let k = Tensor::rand_uniform(&[nk, d], -3.0, 3.0, &mut r);
        let c = correlate(&emb(q.clone()), &emb(k.clone())).unwrap();
        for i in 0..nq {
            let row = c.scores.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        prop_assert_eq!(hard_match(&c), brute_force_match(&q, &k).unwrap());
        let s = row_max_weights(&c);
        for i in 0..nq {
            prop_assert_eq!(s.w.data()[i], c.scores.row(i).iter().copied().fold(f64::MIN, f64::max));
        }
    }
}

// ---- warp ----

#[test]
fn warp_gathers_rows() {
    let mut r = rng(9);
    let v = emb(Tensor::rand_uniform(&[6, 3], -1.0, 1.0, &mut r));
    let id = MatchIndex::new((0..6).collect(), 6).unwrap();
    assert_eq!(warp(&v, &id).unwrap(), v.rows);
    let zero = MatchIndex::new(vec![0; 6], 6).unwrap();
    let w = warp(&v, &zero).unwrap();
    for i in 0..6 {
        assert_eq!(w.row(i), v.rows.row(0));
    }
    let idx: Vec<usize> = (0..10).map(|_| r.gen_range(0..6)).collect();
    let w = warp(&v, &MatchIndex::new(idx.clone(), 6).unwrap()).unwrap();
    for (i, &j) in idx.iter().enumerate() {
        assert_eq!(w.row(i), v.rows.row(j));
    }
}

#[test]
fn warp_rejects_out_of_range() {
    assert!(matches!(MatchIndex::new(vec![0, 6], 6), Err(crate::Error::Contract(_))));
    let v = emb(Tensor::zeros(&[6, 3]));
    let bogus = MatchIndex { idx: vec![7], num_keys: 8 };
    assert!(matches!(warp(&v, &bogus), Err(crate::Error::Contract(_))));
}

// ---- correlation upsampling ----

fn grid(gh: usize, gw: usize) -> GridMeta {
    GridMeta::new(1, gh, gw, 3, 1, 1).unwrap()
}

#[test]
fn single_cell_upsamples_to_uniform() {
    let c = CorrelationMatrix { scores: Tensor::ones(&[1, 1]), query_grid: grid(1, 1), key_grid: grid(1, 1) };
    let up = upsample_correlation(&c, &grid(3, 2), &grid(2, 4)).unwrap();
    assert_eq!(up.scores.shape(), &[6, 8]);
    assert!(up.scores.data().iter().all(|&v| v == 0.125));
}

#[test]
fn upsampling_replicates_blocks() {
    let scores = Tensor::from_fn(&[4, 4], |i| (i + 1) as f64);
    let c = CorrelationMatrix { scores: scores.clone(), query_grid: grid(2, 2), key_grid: grid(2, 2) };
    let up = upsample_correlation(&c, &grid(4, 4), &grid(4, 4)).unwrap();
    for qi in 0..16 {
        let src_q = (qi / 4 / 2) * 2 + (qi % 4) / 2;
        for kj in 0..16 {
            let src_k = (kj / 4 / 2) * 2 + (kj % 4) / 2;
            assert_eq!(up.scores.get(&[qi, kj]), scores.get(&[src_q, src_k]) / 4.0);
        }
    }
    assert!(matches!(
        upsample_correlation(&c, &grid(5, 4), &grid(4, 4)),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn upsampled_argmax_maps_back_to_source() {
    let mut r = rng(10);
    let q = Tensor::rand_uniform(&[12, 5], -1.0, 1.0, &mut r);
    let k = Tensor::rand_uniform(&[6, 5], -1.0, 1.0, &mut r);
    let c = correlate(
        &PatchEmbedding::new(q, grid(3, 4), false).unwrap(),
        &PatchEmbedding::new(k, grid(2, 3), false).unwrap(),
    )
    .unwrap();
    let up = upsample_correlation(&c, &grid(6, 8), &grid(8, 6)).unwrap();
    let src = hard_match(&c);
    let fine = hard_match(&up);
    for qi in 0..48 {
        let (r_, c_) = (qi / 8, qi % 8);
        let sq = (r_ * 3 / 6) * 4 + c_ * 4 / 8;
        let kj = fine.idx[qi];
        let sk = (kj / 6 * 2 / 8) * 3 + (kj % 6) * 3 / 6;
        assert_eq!(sk, src.idx[sq]);
    }
    for i in 0..48 {
        assert!((up.scores.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

// ---- S-A / M-A ----

fn pyramid(img: &Tensor, p: &ExtractorParams) -> FeaturePyramid {
    extract_pyramid(img, p).unwrap()
}

#[test]
fn sa_self_matches_on_identical_images() {
    let p = small_extractor(11);
    let f = pyramid(&textured(32, 12), &p);
    let cfg = AlignConfig::default();
    let sa = sa_matches(&f, &f, &AlignParams::calibrate(&p, &textured(32, 12), &f, &cfg).unwrap(), &cfg).unwrap();
    let g = sa.weights.x4.grid;
    assert!(identity_fraction(&sa.idx.x4.idx, &interior(&g)) >= 0.95);
    // the normalized rows the matcher saw, checked with the exhaustive oracle
    let e = word_embed(&f.x4, 3, 1, 1, None).unwrap().normalized(cfg.temperature);
    assert_eq!(brute_force_match(&e.rows, &e.rows).unwrap(), sa.idx.x4);
}

#[test]
fn zero_keys_give_uniform_sa_weights() {
    let p = small_extractor(13);
    let lr = pyramid(&textured(16, 14), &p);
    let zero = lr.map(|_, t| Tensor::zeros(t.shape()));
    let mut r = rng(15);
    // linear maps without bias keep zero keys at zero
    let k_proj = Pyramid::from_fn(|s| match s {
        Scale::X4 => None,
        _ => {
            let din = lr.get(s).shape()[0] * 9;
            Some(Projection::new(Tensor::rand_uniform(&[72, din], -1.0, 1.0, &mut r), Tensor::zeros(&[72])).unwrap())
        }
    });
    let params = AlignParams { q_proj: None, k_proj };
    let (_, weights) = sa_align(&lr, &zero, &lr, &params, &AlignConfig::default()).unwrap();
    for s in Scale::ALL {
        let nk = lr.get(s).shape()[1] * lr.get(s).shape()[2];
        assert!(weights.get(s).w.data().iter().all(|&w| (w - 1.0 / nk as f64).abs() < 1e-15));
    }
}

#[test]
fn sa_output_shapes() {
    let p = ExtractorParams::new(ExtractorConfig::default(), &mut rng(16));
    let img = textured(32, 17);
    let f = pyramid(&img, &p);
    let cfg = AlignConfig::default();
    let params = AlignParams::calibrate(&p, &img, &f, &cfg).unwrap();
    let (out, w) = sa_align(&f, &f, &f, &params, &cfg).unwrap();
    assert_eq!(out.x4.shape(), &[16, 32, 32]);
    assert_eq!(out.x2.shape(), &[32, 16, 16]);
    assert_eq!(out.x1.shape(), &[64, 8, 8]);
    for s in Scale::ALL {
        assert_eq!(w.get(s).w.shape(), &[1024]);
        assert!(w.get(s).w.data().iter().all(|&v| v > 0.0 && v <= 1.0));
    }
}

#[test]
fn sa_rejects_unprojected_coarse_keys() {
    let p = small_extractor(18);
    let f = pyramid(&textured(16, 19), &p);
    assert!(sa_matches(&f, &f, &AlignParams::identity(), &AlignConfig::default()).is_err());
}

#[test]
fn sa_features_are_folded_warps() {
    let p = small_extractor(20);
    let img = textured(16, 21);
    let f = pyramid(&img, &p);
    let lr = pyramid(&textured(16, 22), &p);
    let cfg = AlignConfig::default();
    let params = AlignParams::calibrate(&p, &img, &f, &cfg).unwrap();
    let sa = sa_matches(&lr, &f, &params, &cfg).unwrap();
    let (out, _) = sa_align(&lr, &f, &f, &params, &cfg).unwrap();
    for s in Scale::ALL {
        let v = word_embed(f.get(s), 3, 1, 1, None).unwrap();
        let warped = warp(&v, sa.idx.get(s)).unwrap();
        let c = f.get(s).shape()[0];
        let folded = crate::numerics::fold(&warped, &GridMeta::new(c, 16, 16, 3, 1, 1).unwrap()).unwrap();
        let k = s.stride_from_hr();
        let want = if k == 1 { folded } else { crate::numerics::avg_pool(&folded, k).unwrap() };
        assert_eq!(out.get(s), &want);
    }
}

#[test]
fn ma_self_matches_on_identical_images() {
    let p = small_extractor(23);
    let f = pyramid(&textured(32, 24), &p);
    let cfg = AlignConfig::default();
    let ma = ma_matches(&f, &f, &cfg).unwrap();
    let g = ma.grids.x4;
    assert!(identity_fraction(&ma.merged.idx, &interior(&g)) >= 0.95);
    for s in [Scale::X2, Scale::X1] {
        let gs = ma.grids.get(s);
        let e = word_embed(f.get(s), 3, 1, 1, None).unwrap().normalized(cfg.temperature);
        let oracle = brute_force_match(&e.rows, &e.rows).unwrap();
        assert!(identity_fraction(&oracle.idx, &interior(gs)) >= 0.95);
        assert!(identity_fraction(&ma.per_scale.get(s).idx, &interior(gs)) >= 0.95);
    }
    assert!(ma.weight.w.data().iter().all(|&w| w > 0.0 && w <= 1.0));
}

#[test]
fn finest_only_ma_reduces_to_sa() {
    let p = small_extractor(25);
    let lr = pyramid(&textured(16, 26), &p);
    let rf = pyramid(&textured(16, 27), &p);
    let rdd = pyramid(&textured(16, 28), &p);
    let mut cfg = AlignConfig::default();
    cfg.ma_scales = Pyramid { x4: true, x2: false, x1: false };
    let params = AlignParams::calibrate(&p, &textured(16, 28), &rdd, &cfg).unwrap();
    let (fsa, ssa) = sa_align(&lr, &rdd, &rf, &params, &cfg).unwrap();
    let (fma, sma) = ma_align(&lr, &rdd, &rf, &cfg).unwrap();
    assert_eq!(fma.x4, fsa.x4);
    assert_eq!(sma, ssa.x4);
}

#[test]
fn streamed_merge_equals_explicit_merge() {
    let p = small_extractor(29);
    let lr = pyramid(&textured(32, 30), &p);
    let rdd = pyramid(&textured(32, 31), &p);
    let cfg = AlignConfig::default();
    let ma = ma_matches(&lr, &rdd, &cfg).unwrap();
    let c = Pyramid::from_fn(|s| {
        let q = word_embed(lr.get(s), 3, 1, 1, None).unwrap().normalized(cfg.temperature);
        let k = word_embed(rdd.get(s), 3, 1, 1, None).unwrap().normalized(cfg.temperature);
        correlate(&q, &k).unwrap()
    });
    let merged = merge_correlations(&[&c.x1, &c.x2, &c.x4]).unwrap();
    assert_eq!(merged.scores.shape(), &[1024, 1024]);
    assert_eq!(ma.weight.w.shape(), &[1024]);
    for i in 0..1024 {
        assert!((merged.scores.row(i).iter().sum::<f64>() - 3.0).abs() < 1e-9);
    }
    assert_eq!(hard_match(&merged), ma.merged);
    let explicit = row_max_weights(&merged).w.map(|v| v / 3.0);
    assert_eq!(explicit, ma.weight.w);
}

#[test]
fn index_transfer_uses_block_centres() {
    // 4x grid 8x8, 2x grid 4x4; every 4x query matched to key (5, 2)
    let g4 = grid(8, 8);
    let g2 = grid(4, 4);
    let merged = MatchIndex::new(vec![5 * 8 + 2; 64], 64).unwrap();
    let t = transfer_index(&merged, &g4, &g4, &g2, &g2).unwrap();
    assert!(t.idx.iter().all(|&j| j == 2 * 4 + 1));
    // identity map stays identity at the coarse scale
    let id = MatchIndex::new((0..64).collect(), 64).unwrap();
    let t = transfer_index(&id, &g4, &g4, &g2, &g2).unwrap();
    assert_eq!(t.idx, (0..16).collect::<Vec<_>>());
}

#[test]
fn shared_plan_equals_separate_passes() {
    let p = small_extractor(32);
    let lr = pyramid(&textured(16, 33), &p);
    let img = textured(16, 34);
    let rdd = pyramid(&img, &p);
    let cfg = AlignConfig::default();
    let params = AlignParams::calibrate(&p, &img, &rdd, &cfg).unwrap();
    let plan = plan_alignment(&lr, &rdd, &params, &cfg).unwrap();
    assert_eq!(plan.sa, sa_matches(&lr, &rdd, &params, &cfg).unwrap());
    assert_eq!(plan.ma, ma_matches(&lr, &rdd, &cfg).unwrap());
}

#[test]
fn ma_output_shapes() {
    let p = ExtractorParams::new(ExtractorConfig::default(), &mut rng(35));
    let lr = Tensor::rand_uniform(&[1, 8, 8], -1.0, 1.0, &mut rng(36));
    let inp = build_inputs(&lr, &textured(32, 37)).unwrap();
    let q = pyramid(&inp.lr_up, &p);
    let k = pyramid(&inp.reference_degraded, &p);
    let v = pyramid(&inp.reference, &p);
    let (out, w) = ma_align(&q, &k, &v, &AlignConfig::default()).unwrap();
    assert_eq!(out.x4.shape(), &[16, 32, 32]);
    assert_eq!(out.x2.shape(), &[32, 16, 16]);
    assert_eq!(out.x1.shape(), &[64, 8, 8]);
    assert_eq!(w.w.shape(), &[1024]);
}

// ---- fold_weights ----

#[test]
fn fold_weights_examples() {
    let g = GridMeta::new(1, 4, 4, 3, 1, 1).unwrap();
    let uniform = SoftWeightVector::new(Tensor::full(&[16], 0.3), g).unwrap();
    assert_eq!(fold_weights(&uniform, 4, 4).unwrap(), Tensor::full(&[1, 4, 4], 0.3));
    let mut hot = Tensor::zeros(&[16]);
    hot.data_mut()[6] = 1.0;
    let m = fold_weights(&SoftWeightVector::new(hot, g).unwrap(), 4, 4).unwrap();
    assert_eq!(m.sum(), 1.0);
    assert_eq!(m.get(&[0, 1, 2]), 1.0);
}

#[test]
fn fold_weights_upsizing_replicates_blocks() {
    let g = GridMeta::new(1, 4, 4, 3, 1, 1).unwrap();
    let w = Tensor::rand_uniform(&[16], 0.0, 1.0, &mut rng(38));
    let m = fold_weights(&SoftWeightVector::new(w.clone(), g).unwrap(), 8, 8).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            assert_eq!(m.get(&[0, y, x]), w.data()[(y / 2) * 4 + x / 2]);
        }
    }
    // and down to a coarser grid: one sample per 2x2 block
    let d = fold_weights(&SoftWeightVector::new(w.clone(), g).unwrap(), 2, 2).unwrap();
    assert_eq!(d.data(), &[w.data()[0], w.data()[2], w.data()[8], w.data()[10]]);
}

// ---- accuracy ----

#[test]
fn cell_centres_in_hr_pixels() {
    let g = GridMeta::new(1, 16, 16, 3, 1, 1).unwrap();
    assert_eq!(cell_centre_hr(0, &g, 64, 64), (1.5, 1.5));
    assert_eq!(cell_centre_hr(16 + 2, &g, 64, 64), (5.5, 9.5));
    assert_eq!(cell_centre_hr(5, &GridMeta::new(1, 64, 64, 3, 1, 1).unwrap(), 64, 64), (0.0, 5.0));
}

#[test]
fn self_alignment_scores_perfect_baseline() {
    let p = small_extractor(39);
    let img = textured(16, 40);
    let f = pyramid(&img, &p);
    let cfg = AlignConfig::default();
    let params = AlignParams::calibrate(&p, &img, &f, &cfg).unwrap();
    let plan = plan_alignment(&f, &f, &params, &cfg).unwrap();
    let truth: Vec<_> = (0..256).map(|i| Some(((i / 16) as f64, (i % 16) as f64))).collect();
    let acc = score_matches(&plan, &truth, 16, 16, 0.0).unwrap();
    assert_eq!(acc.queries, 256);
    assert!(acc.ca >= 0.95);
    let none = vec![None; 256];
    assert_eq!(score_matches(&plan, &none, 16, 16, 3.0).unwrap().queries, 0);
    assert!(score_matches(&plan, &truth[..10], 16, 16, 3.0).is_err());
}
