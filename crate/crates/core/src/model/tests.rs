use super::*;
use crate::rng::RngStream;
use alloc::vec;
use proptest::prelude::*;
use std::vec::Vec;

fn rand(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

fn rand_affine(rng: &mut RngStream, i: usize, o: usize) -> Affine {
    Affine { weight: rand(rng, &[i, o], 0.7), bias: rand(rng, &[o], 0.3) }
}

fn zero_affine(i: usize, o: usize) -> Affine {
    Affine { weight: zeros(&[i, o]), bias: zeros(&[o]) }
}

fn rand_attention(rng: &mut RngStream, d: usize) -> AttentionWeights {
    AttentionWeights {
        q: rand_affine(rng, d, d),
        k: rand_affine(rng, d, d),
        v: rand_affine(rng, d, d),
        out: rand_affine(rng, d, d),
    }
}

fn identity(d: usize) -> Tensor {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    Tensor::new(&[d, d], m).unwrap()
}

// Dense oracles over plain row-major slices.

fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                c[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    c
}

fn affine_rows(x: &[f64], rows: usize, a: &Affine) -> Vec<f64> {
    let (i, o) = (a.weight.shape()[0], a.weight.shape()[1]);
    let mut y = mm(x, a.weight.data(), rows, i, o);
    for r in 0..rows {
        for j in 0..o {
            y[r * o + j] += a.bias.data()[j];
        }
    }
    y
}

fn softmax_rows(x: &mut [f64], n: usize) {
    for row in x.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
    }
}

/// Single-head attention of `nq` query rows over `nk` context rows.
fn attention_oracle(q_in: &[f64], nq: usize, c_in: &[f64], nk: usize, d: usize, w: &AttentionWeights) -> Vec<f64> {
    let q = affine_rows(q_in, nq, &w.q);
    let k = affine_rows(c_in, nk, &w.k);
    let v = affine_rows(c_in, nk, &w.v);
    let mut s = vec![0.0; nq * nk];
    for i in 0..nq {
        for j in 0..nk {
            s[i * nk + j] = (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() / (d as f64).sqrt();
        }
    }
    softmax_rows(&mut s, nk);
    let mixed = mm(&s, &v, nq, nk, d);
    affine_rows(&mixed, nq, &w.out)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn patch_embed_geometry() {
    let mut rng = RngStream::new(1, 0);
    let d = 2;
    let w = PatchWeights {
        conv: ConvWeights { weight: rand(&mut rng, &[d, 3, 16, 16], 0.1), bias: zeros(&[d]) },
        pos: zeros(&[196, d]),
    };
    let g = patch_embed(&zeros(&[1, 3, 224, 224]), &w, 16).unwrap();
    assert_eq!(g.tokens.shape(), &[1, 196, d]);
    assert_eq!((g.grid_h, g.grid_w), (14, 14));

    let w = PatchWeights {
        conv: ConvWeights { weight: rand(&mut rng, &[4, 3, 16, 16], 0.1), bias: rand(&mut rng, &[4], 1.0) },
        pos: zeros(&[4, 4]),
    };
    let g = patch_embed(&zeros(&[2, 3, 32, 32]), &w, 16).unwrap();
    assert_eq!((g.grid_h, g.grid_w), (2, 2));
    for tok in g.tokens.data().chunks(4) {
        assert_eq!(tok, w.conv.bias.data());
    }
    assert!(matches!(patch_embed(&zeros(&[1, 3, 30, 30]), &w, 16), Err(Error::Geometry(_))));
}

#[test]
fn patch_embed_matches_patch_dot_products() {
    let mut rng = RngStream::new(2, 0);
    let (p, d) = (4, 3);
    let x = rand(&mut rng, &[1, 3, 8, 8], 1.0);
    let w = PatchWeights {
        conv: ConvWeights { weight: rand(&mut rng, &[d, 3, p, p], 0.5), bias: rand(&mut rng, &[d], 0.5) },
        pos: rand(&mut rng, &[4, d], 0.5),
    };
    let g = patch_embed(&x, &w, p).unwrap();
    for (t, (gr, gc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
        for f in 0..d {
            let mut s = w.conv.bias.data()[f] + w.pos.data()[t * d + f];
            for c in 0..3 {
                for i in 0..p {
                    for j in 0..p {
                        s += x.data()[(c * 8 + gr * p + i) * 8 + gc * p + j]
                            * w.conv.weight.data()[((f * 3 + c) * p + i) * p + j];
                    }
                }
            }
            assert!((g.tokens.data()[t * d + f] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn self_attention_single_token_is_projected_value() {
    let mut rng = RngStream::new(3, 0);
    let w = rand_attention(&mut rng, 4);
    let x = rand(&mut rng, &[2, 1, 4], 1.0);
    let mut ctx = ForwardCtx::eval().traced();
    let out = multi_head_self_attention(&x, 2, &w, &mut ctx).unwrap();
    let expect = affine_rows(&affine_rows(x.data(), 2, &w.v), 2, &w.out);
    assert!(close(out.data(), &expect, 1e-12));
    assert!(ctx.take_trace()[0].weights.iter().all(|&a| a == 1.0));
}

#[test]
fn identical_tokens_attend_uniformly() {
    let mut rng = RngStream::new(4, 0);
    let w = rand_attention(&mut rng, 4);
    let tok: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = Tensor::new(&[1, 5, 4], tok.repeat(5)).unwrap();
    let mut ctx = ForwardCtx::eval().traced();
    multi_head_self_attention(&x, 2, &w, &mut ctx).unwrap();
    for row in ctx.take_trace()[0].rows() {
        assert!(row.iter().all(|&a| (a - 0.2).abs() < 1e-15));
    }
}

#[test]
fn self_attention_matches_dense_oracle() {
    let mut rng = RngStream::new(5, 0);
    let w = rand_attention(&mut rng, 4);
    let x = rand(&mut rng, &[1, 3, 4], 1.0);
    let out = multi_head_self_attention(&x, 1, &w, &mut ForwardCtx::eval()).unwrap();
    let expect = attention_oracle(x.data(), 3, x.data(), 3, 4, &w);
    assert!(close(out.data(), &expect, 1e-10));
}

#[test]
fn multi_head_attention_matches_per_head_oracle() {
    let mut rng = RngStream::new(6, 0);
    let (n, d, h) = (3, 6, 3);
    let dh = d / h;
    let w = rand_attention(&mut rng, d);
    let x = rand(&mut rng, &[1, n, d], 1.0);
    let out = multi_head_self_attention(&x, h, &w, &mut ForwardCtx::eval()).unwrap();
    let q = affine_rows(x.data(), n, &w.q);
    let k = affine_rows(x.data(), n, &w.k);
    let v = affine_rows(x.data(), n, &w.v);
    let mut concat = vec![0.0; n * d];
    for head in 0..h {
        let col = |m: &[f64], i: usize, t: usize| m[i * d + head * dh + t];
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = (0..dh).map(|t| col(&q, i, t) * col(&k, j, t)).sum::<f64>() / (dh as f64).sqrt();
            }
        }
        softmax_rows(&mut s, n);
        for i in 0..n {
            for t in 0..dh {
                concat[i * d + head * dh + t] = (0..n).map(|j| s[i * n + j] * col(&v, j, t)).sum();
            }
        }
    }
    let expect = affine_rows(&concat, n, &w.out);
    assert!(close(out.data(), &expect, 1e-10));
    assert!(matches!(
        multi_head_self_attention(&x, 4, &w, &mut ForwardCtx::eval()),
        Err(Error::Config(_))
    ));
}

fn zero_layer(d: usize, hidden: usize) -> EncoderLayerWeights {
    let norm = || Norm { gamma: Tensor::new(&[d], vec![1.0; d]).unwrap(), beta: zeros(&[d]) };
    EncoderLayerWeights {
        ln1: norm(),
        attn: AttentionWeights {
            q: zero_affine(d, d),
            k: zero_affine(d, d),
            v: zero_affine(d, d),
            out: zero_affine(d, d),
        },
        ln2: norm(),
        fc1: zero_affine(d, hidden),
        fc2: zero_affine(hidden, d),
    }
}

#[test]
fn zero_weight_encoder_passes_input_through() {
    let mut rng = RngStream::new(7, 0);
    let x = rand(&mut rng, &[2, 5, 8], 1.0);
    let layers: Vec<_> = (0..4).map(|_| zero_layer(8, 32)).collect();
    let out = transformer_encoder(&x, &layers, 2, 0.1, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(out.data(), x.data());
}

#[test]
fn encoder_layer_matches_step_by_step_oracle() {
    let mut rng = RngStream::new(8, 0);
    let (n, d, hid) = (3, 4, 6);
    let norm = |rng: &mut RngStream| Norm { gamma: rand(rng, &[d], 1.0), beta: rand(rng, &[d], 0.5) };
    let w = EncoderLayerWeights {
        ln1: norm(&mut rng),
        attn: rand_attention(&mut rng, d),
        ln2: norm(&mut rng),
        fc1: rand_affine(&mut rng, d, hid),
        fc2: rand_affine(&mut rng, hid, d),
    };
    let x = rand(&mut rng, &[1, n, d], 1.0);
    let out = transformer_encoder(&x, core::slice::from_ref(&w), 1, 0.0, &mut ForwardCtx::eval()).unwrap();

    let ln = |v: &[f64], nrm: &Norm| -> Vec<f64> {
        v.chunks(d)
            .flat_map(|row| {
                let m = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / d as f64;
                row.iter()
                    .enumerate()
                    .map(move |(j, a)| (a - m) / (var + LN_EPS).sqrt() * nrm.gamma.data()[j] + nrm.beta.data()[j])
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / core::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    let h = ln(x.data(), &w.ln1);
    let a = attention_oracle(&h, n, &h, n, d, &w.attn);
    let x1: Vec<f64> = x.data().iter().zip(&a).map(|(p, q)| p + q).collect();
    let h2 = ln(&x1, &w.ln2);
    let m1: Vec<f64> = affine_rows(&h2, n, &w.fc1).into_iter().map(gelu).collect();
    let m2 = affine_rows(&m1, n, &w.fc2);
    let expect: Vec<f64> = x1.iter().zip(&m2).map(|(p, q)| p + q).collect();
    assert!(close(out.data(), &expect, 1e-10));
}

#[test]
fn encoder_keeps_shape() {
    let mut rng = RngStream::new(9, 0);
    for (n, d) in [(1, 4), (4, 8), (9, 6)] {
        let layers = vec![EncoderLayerWeights {
            ln1: Norm { gamma: rand(&mut rng, &[d], 1.0), beta: rand(&mut rng, &[d], 1.0) },
            attn: rand_attention(&mut rng, d),
            ln2: Norm { gamma: rand(&mut rng, &[d], 1.0), beta: rand(&mut rng, &[d], 1.0) },
            fc1: rand_affine(&mut rng, d, 2 * d),
            fc2: rand_affine(&mut rng, 2 * d, d),
        }];
        let x = rand(&mut rng, &[2, n, d], 1.0);
        let out = transformer_encoder(&x, &layers, 2, 0.1, &mut ForwardCtx::eval()).unwrap();
        assert_eq!(out.shape(), x.shape());
    }
}

#[test]
fn cnn_branch_shapes_and_zero_case() {
    let mut rng = RngStream::new(10, 0);
    let mut blocks = Vec::new();
    let mut c_in = 3;
    for c in [16, 32, 64] {
        blocks.push(ConvWeights { weight: rand(&mut rng, &[c, c_in, 3, 3], 0.2), bias: zeros(&[c]) });
        c_in = c;
    }
    let x = rand(&mut rng, &[1, 3, 224, 224], 1.0);
    let out = cnn_branch(&x, &blocks, 0.1, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(out.shape(), &[1, 64, 28, 28]);

    let zero: Vec<ConvWeights> = blocks
        .iter()
        .map(|b| ConvWeights { weight: zeros(b.weight.shape()), bias: zeros(b.bias.shape()) })
        .collect();
    let small = rand(&mut rng, &[2, 3, 16, 16], 1.0);
    let out = cnn_branch(&small, &zero, 0.1, &mut ForwardCtx::eval()).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));

    let tiny = rand(&mut rng, &[1, 3, 4, 4], 1.0);
    assert!(matches!(cnn_branch(&tiny, &zero, 0.1, &mut ForwardCtx::eval()), Err(Error::Geometry(_))));
}

#[test]
fn cnn_block_matches_conv_pool_loop_oracle() {
    let mut rng = RngStream::new(11, 0);
    let ramp: Vec<f64> = (0..3 * 64).map(|i| (i % 64) as f64 / 63.0 - 0.3 * (i / 64) as f64).collect();
    let x = Tensor::new(&[1, 3, 8, 8], ramp.clone()).unwrap();
    let w = ConvWeights { weight: rand(&mut rng, &[2, 3, 3, 3], 0.5), bias: rand(&mut rng, &[2], 0.2) };
    let out = cnn_branch(&x, core::slice::from_ref(&w), 0.0, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(out.shape(), &[1, 2, 4, 4]);
    let at = |c: usize, r: isize, col: isize| -> f64 {
        if (0..8).contains(&r) && (0..8).contains(&col) {
            ramp[(c * 8 + r as usize) * 8 + col as usize]
        } else {
            0.0
        }
    };
    for f in 0..2 {
        let mut conv = [[0.0; 8]; 8];
        for (r, row) in conv.iter_mut().enumerate() {
            for (col, v) in row.iter_mut().enumerate() {
                let mut s = w.bias.data()[f];
                for c in 0..3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            s += at(c, r as isize + i as isize - 1, col as isize + j as isize - 1)
                                * w.weight.data()[((f * 3 + c) * 3 + i) * 3 + j];
                        }
                    }
                }
                *v = s.max(0.0);
            }
        }
        for pr in 0..4 {
            for pc in 0..4 {
                let m = [conv[2 * pr][2 * pc], conv[2 * pr][2 * pc + 1], conv[2 * pr + 1][2 * pc], conv[2 * pr + 1][2 * pc + 1]]
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((out.data()[(f * 4 + pr) * 4 + pc] - m).abs() < 1e-12);
            }
        }
    }
}

fn rand_cross(rng: &mut RngStream, c: usize, d: usize) -> CrossWeights {
    CrossWeights { kv: rand_affine(rng, c, d), attn: rand_attention(rng, d), fuse: rand_affine(rng, 2 * d, d) }
}

#[test]
fn cross_attention_zero_queries_average_cnn_tokens() {
    let mut rng = RngStream::new(12, 0);
    let (c, d) = (3, 4);
    let mut w = rand_cross(&mut rng, c, d);
    w.attn.q = zero_affine(d, d);
    w.attn.out = Affine { weight: identity(d), bias: zeros(&[d]) };
    // fuse keeps only the attended half
    let mut sel = vec![0.0; 2 * d * d];
    for i in 0..d {
        sel[(d + i) * d + i] = 1.0;
    }
    w.fuse = Affine { weight: Tensor::new(&[2 * d, d], sel).unwrap(), bias: zeros(&[d]) };
    let cnn = rand(&mut rng, &[1, c, 2, 3], 1.0);
    let enc = rand(&mut rng, &[1, 5, d], 1.0);
    let mut ctx = ForwardCtx::eval().traced();
    let out = cross_attention_fuse(&cnn, &enc, &w, 2, &mut ctx).unwrap();
    for row in ctx.take_trace()[0].rows() {
        assert!(row.iter().all(|&a| (a - 1.0 / 6.0).abs() < 1e-15));
    }
    // flatten the CNN map to 6 tokens of width c
    let toks: Vec<f64> = (0..6).flat_map(|p| (0..c).map(move |ch| (ch, p))).map(|(ch, p)| cnn.data()[ch * 6 + p]).collect();
    let v = affine_rows(&affine_rows(&toks, 6, &w.kv), 6, &w.attn.v);
    let mean: Vec<f64> = (0..d).map(|j| (0..6).map(|t| v[t * d + j]).sum::<f64>() / 6.0).collect();
    for tok in out.data().chunks(d) {
        assert!(close(tok, &mean, 1e-12));
    }
}

#[test]
fn cross_attention_zero_value_path_is_fusion_of_encoder() {
    let mut rng = RngStream::new(13, 0);
    let (c, d) = (2, 4);
    let mut w = rand_cross(&mut rng, c, d);
    w.attn.v = zero_affine(d, d);
    w.attn.out = zero_affine(d, d);
    let enc = rand(&mut rng, &[2, 3, d], 1.0);
    let out = cross_attention_fuse(&zeros(&[2, c, 2, 2]), &enc, &w, 1, &mut ForwardCtx::eval()).unwrap();
    let padded: Vec<f64> = enc.data().chunks(d).flat_map(|t| t.iter().cloned().chain(vec![0.0; d])).collect();
    assert!(close(out.data(), &affine_rows(&padded, 6, &w.fuse), 1e-12));
}

#[test]
fn cross_attention_matches_explicit_oracle() {
    let mut rng = RngStream::new(14, 0);
    let (c, d) = (3, 4);
    let w = rand_cross(&mut rng, c, d);
    let cnn = rand(&mut rng, &[1, c, 1, 2], 1.0);
    let enc = rand(&mut rng, &[1, 2, d], 1.0);
    let out = cross_attention_fuse(&cnn, &enc, &w, 1, &mut ForwardCtx::eval()).unwrap();
    let toks = vec![cnn.data()[0], cnn.data()[2], cnn.data()[4], cnn.data()[1], cnn.data()[3], cnn.data()[5]];
    let kv = affine_rows(&toks, 2, &w.kv);
    let att = attention_oracle(enc.data(), 2, &kv, 2, d, &w.attn);
    let cat: Vec<f64> = (0..2).flat_map(|i| enc.data()[i * d..(i + 1) * d].iter().chain(&att[i * d..(i + 1) * d]).cloned().collect::<Vec<_>>()).collect();
    assert!(close(out.data(), &affine_rows(&cat, 2, &w.fuse), 1e-10));
}

fn grid(gh: usize, gw: usize) -> TokenGrid {
    TokenGrid { tokens: zeros(&[1, gh * gw, 2]), grid_h: gh, grid_w: gw }
}

#[test]
fn grid_graphs_enumerate() {
    assert_eq!(&*build_graph(&grid(1, 1)).adjacency, &[true]);
    assert!(build_graph(&grid(2, 2)).adjacency.iter().all(|&e| e));
    let g = build_graph(&grid(3, 3));
    assert_eq!(g.adjacency[4 * 9..5 * 9].iter().filter(|&&e| e).count(), 9);
    assert_eq!(g.adjacency[0..9].iter().filter(|&&e| e).count(), 4);
    assert_eq!(g.adjacency[9..18].iter().filter(|&&e| e).count(), 6);
}

proptest! {
    #[test]
    fn grid_adjacency_is_symmetric_with_king_moves(gh in 1usize..7, gw in 1usize..7) {
        let adj = grid8_adjacency(gh, gw);
        let n = gh * gw;
        for i in 0..n {
            prop_assert!(adj[i * n + i]);
            for j in 0..n {
                prop_assert_eq!(adj[i * n + j], adj[j * n + i]);
            }
        }
        // 8-neighbourhood edge count (ordered pairs, self-loops included)
        let expect = n + 2 * (gh * (gw - 1) + gw * (gh - 1) + 2 * (gh - 1) * (gw - 1));
        prop_assert_eq!(adj.iter().filter(|&&e| e).count(), expect);
    }
}

fn rand_gat(rng: &mut RngStream, d: usize) -> GatWeights {
    GatWeights { weight: rand(rng, &[d, d], 0.7), a_src: rand(rng, &[d, 1], 0.7), a_dst: rand(rng, &[d, 1], 0.7) }
}

/// Masked dense GAT oracle for one batch element.
fn gat_oracle(h: &[f64], n: usize, d: usize, adj: &[bool], w: &GatWeights, slope: f64) -> Vec<f64> {
    let wh = mm(h, w.weight.data(), n, d, d);
    let s = mm(&wh, w.a_src.data(), n, d, 1);
    let t = mm(&wh, w.a_dst.data(), n, d, 1);
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let e: Vec<f64> = (0..n)
            .map(|j| {
                let v = s[i] + t[j];
                if v > 0.0 { v } else { slope * v }
            })
            .collect();
        let m = (0..n).filter(|&j| adj[i * n + j]).map(|j| e[j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n).filter(|&j| adj[i * n + j]).map(|j| (e[j] - m).exp()).sum();
        for j in (0..n).filter(|&j| adj[i * n + j]) {
            let a = (e[j] - m).exp() / z;
            for k in 0..d {
                out[i * d + k] += a * wh[j * d + k];
            }
        }
    }
    out.into_iter().map(|v| GRAPH_ACTIVATION.apply(v)).collect()
}

#[test]
fn graph_attention_single_node() {
    let mut rng = RngStream::new(15, 0);
    let w = rand_gat(&mut rng, 3);
    let h = rand(&mut rng, &[2, 1, 3], 1.0);
    let g = FeatureGraph { nodes: h.clone(), adjacency: vec![true].into() };
    let out = graph_attention(&g, &w, 0.2, GRAPH_ACTIVATION, &mut ForwardCtx::eval()).unwrap();
    let expect: Vec<f64> = mm(h.data(), w.weight.data(), 2, 3, 3).into_iter().map(|v| GRAPH_ACTIVATION.apply(v)).collect();
    assert!(close(out.data(), &expect, 1e-12));
}

#[test]
fn graph_attention_path_graph_oracle() {
    let mut rng = RngStream::new(16, 0);
    let (n, d) = (3, 4);
    let adj = [true, true, false, true, true, true, false, true, true];
    let w = rand_gat(&mut rng, d);
    let h = rand(&mut rng, &[1, n, d], 1.0);
    let g = FeatureGraph { nodes: h.clone(), adjacency: adj.to_vec().into() };
    let mut ctx = ForwardCtx::eval().traced();
    let out = graph_attention(&g, &w, 0.2, GRAPH_ACTIVATION, &mut ctx).unwrap();
    assert!(close(out.data(), &gat_oracle(h.data(), n, d, &adj, &w, 0.2), 1e-10));
    let alpha = &ctx.take_trace()[0];
    assert_eq!(alpha.kind, AttentionKind::Graph);
    assert_eq!(alpha.weights[2], 0.0);
    assert_eq!(alpha.weights[6], 0.0);
    for row in alpha.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn graph_attention_rejects_bad_adjacency() {
    let mut rng = RngStream::new(17, 0);
    let w = rand_gat(&mut rng, 2);
    let h = rand(&mut rng, &[1, 2, 2], 1.0);
    let asym = FeatureGraph { nodes: h.clone(), adjacency: vec![true, true, false, true].into() };
    assert!(matches!(graph_attention(&asym, &w, 0.2, GRAPH_ACTIVATION, &mut ForwardCtx::eval()), Err(Error::Contract(_))));
    let no_loop = FeatureGraph { nodes: h, adjacency: vec![false, true, true, true].into() };
    assert!(matches!(graph_attention(&no_loop, &w, 0.2, GRAPH_ACTIVATION, &mut ForwardCtx::eval()), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn graph_attention_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..7, density in 0.0f64..1.0) {
        let mut rng = RngStream::new(seed, 0);
        let d = 3;
        let mut adj = vec![false; n * n];
        for i in 0..n {
            adj[i * n + i] = true;
            for j in 0..i {
                let e = rng.next_f64() < density;
                adj[i * n + j] = e;
                adj[j * n + i] = e;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let w = rand_gat(&mut rng, d);
        let h = rand(&mut rng, &[1, n, d], 1.0);
        // node perm[i] of the relabelled graph is node i of the original
        let mut ph = vec![0.0; n * d];
        let mut padj = vec![false; n * n];
        for i in 0..n {
            ph[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(&h.data()[i * d..(i + 1) * d]);
            for j in 0..n {
                padj[perm[i] * n + perm[j]] = adj[i * n + j];
            }
        }
        let run = |nodes: Tensor, a: Vec<bool>| {
            graph_attention(&FeatureGraph { nodes, adjacency: a.into() }, &w, 0.2, GRAPH_ACTIVATION, &mut ForwardCtx::eval()).unwrap()
        };
        let out = run(h.clone(), adj);
        let pout = run(Tensor::new(&[1, n, d], ph).unwrap(), padj);
        for i in 0..n {
            for k in 0..d {
                prop_assert!((pout.data()[perm[i] * d + k] - out.data()[i * d + k]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn global_average_pool_cases() {
    let v = [0.3, -1.2, 2.5];
    let same = Tensor::new(&[1, 4, 3], v.repeat(4)).unwrap();
    assert!(close(global_average_pool(&same).unwrap().data(), &v, 1e-15));
    let neg: Vec<f64> = v.iter().map(|x| -x).collect();
    let pm = Tensor::new(&[1, 2, 3], [v.to_vec(), neg].concat()).unwrap();
    assert!(global_average_pool(&pm).unwrap().data().iter().all(|&x| x == 0.0));

    let mut rng = RngStream::new(18, 0);
    let x = rand(&mut rng, &[2, 5, 3], 1.0);
    let out = global_average_pool(&x).unwrap();
    assert_eq!(out.shape(), &[2, 3]);
    for b in 0..2 {
        for k in 0..3 {
            let m = (0..5).map(|t| x.data()[(b * 5 + t) * 3 + k]).sum::<f64>() / 5.0;
            assert!((out.data()[b * 3 + k] - m).abs() < 1e-12);
        }
    }
}

#[test]
fn heads_with_zero_weights_emit_bias() {
    let mut rng = RngStream::new(19, 0);
    let pooled = rand(&mut rng, &[3, 8], 1.0);
    let head = HeadWeights {
        norm: Norm { gamma: Tensor::new(&[8], vec![1.0; 8]).unwrap(), beta: zeros(&[8]) },
        out: Affine { weight: zeros(&[8, 5]), bias: rand(&mut rng, &[5], 1.0) },
    };
    let logits = classify_head(&pooled, &head, 0.1, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(logits.shape(), &[3, 5]);
    for row in logits.data().chunks(5) {
        assert_eq!(row, head.out.bias.data());
    }
    let rot = Affine { weight: zeros(&[8, 4]), bias: rand(&mut rng, &[4], 1.0) };
    let r = rotation_head(&pooled, &rot).unwrap();
    assert_eq!(r.shape(), &[3, 4]);
    for row in r.data().chunks(4) {
        assert_eq!(row, rot.bias.data());
    }
}

#[test]
fn rotation_loss_reaches_encoder_weights() {
    let cfg = ModelConfig::tiny();
    let net = HgtNet::new(cfg.clone(), 3).unwrap();
    let mut rng = RngStream::new(20, 0);
    let x = rand(&mut rng, &[2, 3, 32, 32], 1.0);
    let bound = net.params.bind(true);
    let out = model_forward(&cfg, &bound, &x, &mut ForwardCtx::eval()).unwrap();
    out.rot_logits.cross_entropy(&[1, 3]).unwrap().backward().unwrap();
    let grads = bound.grads();
    let g = &grads.get("enc.0.attn.v.weight").unwrap().data;
    assert!(g.iter().any(|&v| v != 0.0));
    // the classification head is not on this path
    assert!(grads.get("head.out.weight").unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn default_model_shapes_and_eval_determinism() {
    let net = HgtNet::new(ModelConfig::default(), 1).unwrap();
    let mut rng = RngStream::new(21, 0);
    let x = rand(&mut rng, &[2, 3, 224, 224], 1.0);
    let a = net.forward_eval(&x).unwrap();
    assert_eq!(a.class_logits.shape(), &[2, 5]);
    assert_eq!(a.rot_logits.shape(), &[2, 4]);
    let b = net.forward_eval(&x).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.class_logits), bits(&b.class_logits));
    assert_eq!(bits(&a.rot_logits), bits(&b.rot_logits));
}

#[test]
fn training_mode_dropout_is_seeded() {
    let net = HgtNet::new(ModelConfig::tiny(), 2).unwrap();
    let mut rng = RngStream::new(22, 0);
    let x = rand(&mut rng, &[2, 3, 32, 32], 1.0);
    let run = |seed| net.forward(&x, &mut ForwardCtx::train(RngStream::new(seed, 1))).unwrap().class_logits;
    assert_eq!(run(5).data(), run(5).data());
    assert_ne!(run(5).data(), run(6).data());
    assert_ne!(run(5).data(), net.forward_eval(&x).unwrap().class_logits.data());
}

#[test]
fn rejects_wrong_input_geometry() {
    let net = HgtNet::new(ModelConfig::tiny(), 2).unwrap();
    assert!(matches!(net.forward_eval(&zeros(&[1, 3, 48, 48])), Err(Error::Geometry(_))));
    assert!(matches!(net.forward_eval(&zeros(&[1, 1, 32, 32])), Err(Error::Geometry(_))));
}

#[test]
fn attention_rows_normalize_in_every_module() {
    let cfg = ModelConfig { num_encoder_layers: 2, ..ModelConfig::tiny() };
    let adj = grid8_adjacency(cfg.grid_side(), cfg.grid_side());
    for seed in 0..10 {
        let net = HgtNet::new(cfg.clone(), seed).unwrap();
        let x = rand(&mut RngStream::new(seed, 9), &[2, 3, 32, 32], 2.0);
        let mut ctx = ForwardCtx::eval().traced();
        net.forward(&x, &mut ctx).unwrap();
        let trace = ctx.take_trace();
        let kinds: Vec<_> = trace.iter().map(|m| m.kind).collect();
        assert_eq!(
            kinds,
            [AttentionKind::SelfAttention, AttentionKind::SelfAttention, AttentionKind::Cross, AttentionKind::Graph]
        );
        for m in &trace {
            for row in m.rows() {
                assert!(row.iter().all(|&a| a >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let n = cfg.num_tokens();
        for (k, &a) in trace[3].weights.iter().enumerate() {
            if !adj[k % (n * n)] {
                assert_eq!(a, 0.0);
            }
        }
    }
}

#[test]
fn config_validation_and_shape_algebra() {
    let d = ModelConfig::default();
    d.validate().unwrap();
    assert_eq!(d.num_tokens(), 196);
    assert_eq!(d.cnn_output_side(), 28);
    assert_eq!(d.mlp_hidden(), 512);
    ModelConfig::tiny().validate().unwrap();
    let bad = [
        ModelConfig { patch_size: 15, ..d.clone() },
        ModelConfig { num_heads: 3, ..d.clone() },
        ModelConfig { num_encoder_layers: 0, ..d.clone() },
        ModelConfig { dropout_p: 1.0, ..d.clone() },
        ModelConfig { num_rotations: 3, ..d.clone() },
        ModelConfig { num_classes: 1, ..d.clone() },
        ModelConfig { rotation_loss_weight: -0.1, ..d.clone() },
        ModelConfig { cnn_channels: vec![], ..d.clone() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
    let small = ModelConfig { image_size: 16, patch_size: 16, cnn_channels: vec![2; 5], ..d };
    assert!(matches!(small.validate(), Err(Error::Geometry(_))));
    assert_eq!(GraphConnectivity::parse("grid8").unwrap(), GraphConnectivity::Grid8);
    assert!(GraphConnectivity::parse("knn").is_err());
}

#[test]
fn initialization_follows_fan_in_bounds() {
    let cfg = ModelConfig::tiny();
    let a = ParamSet::init(&cfg, 7).unwrap();
    assert!(a.bitwise_eq(&ParamSet::init(&cfg, 7).unwrap()));
    assert!(!a.bitwise_eq(&ParamSet::init(&cfg, 8).unwrap()));
    for (name, p) in a.iter() {
        if name.ends_with(".bias") || name.ends_with(".beta") || name == "patch.pos" {
            assert!(p.data.iter().all(|&v| v == 0.0), "{name}");
        } else if name.ends_with(".gamma") {
            assert!(p.data.iter().all(|&v| v == 1.0), "{name}");
        } else {
            let fan_in: usize = if p.shape.len() == 4 { p.shape[1..].iter().product() } else { p.shape[0] };
            let fan_in = if name.starts_with("gat.a_") { 2 * fan_in } else { fan_in };
            let gain = if name == "head.out.weight" || name == "rot.weight" { 0.1 } else { 1.0 };
            let bound = gain / (fan_in as f64).sqrt();
            assert!(p.data.iter().all(|v| v.abs() <= bound), "{name}");
            assert!(p.data.iter().any(|v| v.abs() > 0.5 * bound), "{name}");
            assert!(p.data.iter().any(|&v| v != 0.0), "{name}");
        }
    }
    let names: Vec<&str> = a.names().collect();
    assert!(names.contains(&"enc.0.fc1.weight") && names.contains(&"cnn.0.weight") && names.contains(&"rot.bias"));
}
