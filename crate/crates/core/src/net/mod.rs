//! A self-contained differentiable network for instance-centric grasping:
//! sparse surface and dense volumetric encoders, token aggregation, masked
//! query refinement, a per-query classifier, a feature interpolation module,
//! and implicit occupancy/affordance decoders — all recorded on the
//! reverse-mode tape from [`tensor`].

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{farthest_point_sampling_from, fourier_encode, KnnGrid, PointCloud};
use crate::error::{Error, Result};
use crate::fields::OccupancyField;
use crate::geom::{Aabb, Vec3};

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tensor;

pub use params::{Bindings, ParamStore};
pub use tensor::{Gradients, Tape, Tensor};

fn default_n_queries() -> usize {
    32
}
fn default_d_s() -> usize {
    32
}
fn default_d_v() -> usize {
    32
}
fn default_d_q() -> usize {
    64
}
fn default_rounds() -> usize {
    3
}
fn default_heads() -> usize {
    4
}
fn default_knn_k() -> usize {
    8
}
fn default_freqs() -> usize {
    6
}
fn default_fourier_scale() -> f64 {
    4.0
}
fn default_n_alpha() -> usize {
    12
}
fn default_n_classes() -> usize {
    4
}
fn default_sparse_cell() -> f64 {
    0.005
}
fn default_dense_res() -> usize {
    16
}
fn default_dense_hidden() -> usize {
    8
}
fn default_w_max() -> f64 {
    0.08
}
fn default_decoder_blocks() -> usize {
    2
}
fn default_net_workspace() -> Aabb {
    crate::fields::default_workspace()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    #[serde(default = "default_d_s")]
    pub d_s: usize,
    #[serde(default = "default_d_v")]
    pub d_v: usize,
    #[serde(default = "default_d_q")]
    pub d_q: usize,
    #[serde(default = "default_rounds")]
    pub n_refine_rounds: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_freqs")]
    pub fourier_freqs: usize,
    #[serde(default = "default_fourier_scale")]
    pub fourier_scale: f64,
    #[serde(default = "default_n_alpha")]
    pub n_alpha: usize,
    /// Shape classes; the classifier emits n_classes + 1 with no-object last.
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    /// Surface voxel size for the sparse tokens, meters.
    #[serde(default = "default_sparse_cell")]
    pub sparse_cell: f64,
    /// Dense volumetric grid resolution per axis.
    #[serde(default = "default_dense_res")]
    pub dense_res: usize,
    /// Internal channel width of the dense path (output stays d_v).
    #[serde(default = "default_dense_hidden")]
    pub dense_hidden: usize,
    #[serde(default = "default_w_max")]
    pub w_max: f64,
    /// Residual blocks in each implicit decoder trunk.
    #[serde(default = "default_decoder_blocks")]
    pub decoder_blocks: usize,
    #[serde(default = "default_net_workspace")]
    pub workspace: Aabb,
}

impl Default for NetConfig {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0
            || self.d_s == 0
            || self.d_v == 0
            || self.d_q == 0
            || self.n_refine_rounds == 0
            || self.n_heads == 0
            || self.knn_k == 0
            || self.fourier_freqs == 0
            || self.n_alpha == 0
            || self.n_classes == 0
            || self.dense_res < 2
            || self.dense_hidden == 0
        {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.decoder_blocks == 0 {
            return Err(Error::Config("decoder_blocks must be positive".into()));
        }
        if self.d_q % self.n_heads != 0 {
            return Err(Error::Config("d_q must be divisible by n_heads".into()));
        }
        if !(self.sparse_cell > 0.0 && self.w_max > 0.0) {
            return Err(Error::Config("sparse_cell and w_max must be positive".into()));
        }
        Ok(())
    }

    pub fn fourier_dim(&self) -> usize {
        6 * self.fourier_freqs
    }

    pub fn no_object_class(&self) -> usize {
        self.n_classes
    }
}

/// Surface tokens: occupied voxel centers plus one feature row each.
pub struct SparseTokens {
    pub coords: Vec<Vec3>,
    pub feats: Tensor,
}

/// Dense volumetric features over a regular grid (x fastest).
pub struct DenseGrid {
    pub origin: Vec3,
    pub cell: Vec3,
    pub dims: (usize, usize, usize),
    pub feats: Tensor,
}

/// Value-level instance query: latent embedding plus its 3D anchor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceQuery {
    pub embedding: Vec<f64>,
    pub anchor: Vec3,
}

/// Everything one forward pass produces, still attached to the tape so the
/// losses can differentiate through it.
pub struct ForwardPass<'a> {
    pub bind: Bindings<'a>,
    /// Token voxel centers.
    pub token_coords: Vec<Vec3>,
    /// Input point index -> token index.
    pub point_token: Vec<usize>,
    /// Pre-aggregation surface features [n_tokens x d_s].
    pub sparse: SparseTokens,
    pub dense: DenseGrid,
    /// Aggregated tokens [n_tokens x d_q].
    pub tokens: Tensor,
    pub anchors: Vec<Vec3>,
    /// Refined queries [n_queries x d_q].
    pub queries: Tensor,
    /// Queries converted to the affordance domain [n_queries x d_q].
    pub grasp_queries: Tensor,
    /// Mask logits after each refinement round [n_queries x n_tokens].
    pub mask_logits: Vec<Tensor>,
    /// Class logits [n_queries x (n_classes + 1)].
    pub class_logits: Tensor,
}

impl ForwardPass<'_> {
    pub fn final_mask_logits(&self) -> &Tensor {
        self.mask_logits.last().expect("at least one refinement round")
    }
}

pub struct Model {
    pub cfg: NetConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (ds, dv, dq, dh) = (cfg.d_s, cfg.d_v, cfg.d_q, cfg.dense_hidden);
        let fdim = cfg.fourier_dim();

        fn linear_init(
            p: &mut ParamStore,
            name: &str,
            rows: usize,
            cols: usize,
            rng: &mut ChaCha8Rng,
        ) {
            p.init_linear(&format!("{name}.w"), rows, cols, rng);
            p.init_zeros(&format!("{name}.b"), 1, cols);
        }

        // Sparse surface encoder.
        linear_init(&mut p, "enc.point", 3, ds, &mut rng);
        linear_init(&mut p, "enc.vox", ds, ds, &mut rng);
        for r in 0..2 {
            linear_init(&mut p, &format!("enc.mp{r}"), 2 * ds, ds, &mut rng);
        }
        // Dense volumetric encoder-decoder (three dilated stages).
        linear_init(&mut p, "dense.in", 2, dh, &mut rng);
        for s in 0..3 {
            linear_init(&mut p, &format!("dense.s{s}"), 2 * dh, dh, &mut rng);
        }
        linear_init(&mut p, "dense.out", dh, dv, &mut rng);
        // Token aggregation and positional projections.
        linear_init(&mut p, "agg", ds + dv, dq, &mut rng);
        linear_init(&mut p, "qinit", fdim, dq, &mut rng);
        linear_init(&mut p, "qpos", fdim, dq, &mut rng);
        linear_init(&mut p, "tokpos", fdim, dq, &mut rng);
        // Refinement rounds.
        for r in 0..cfg.n_refine_rounds {
            for kind in ["cross", "self"] {
                for w in ["wq", "wk", "wv", "wo"] {
                    p.init_linear(&format!("ref{r}.{kind}.{w}"), dq, dq, &mut rng);
                }
                p.init_zeros(&format!("ref{r}.{kind}.bo"), 1, dq);
            }
            for ln in ["ln1", "ln2", "ln3"] {
                p.init_ones(&format!("ref{r}.{ln}.gamma"), 1, dq);
                p.init_zeros(&format!("ref{r}.{ln}.beta"), 1, dq);
            }
            linear_init(&mut p, &format!("ref{r}.mlp.fc1"), dq, 2 * dq, &mut rng);
            linear_init(&mut p, &format!("ref{r}.mlp.fc2"), 2 * dq, dq, &mut rng);
        }
        // Shared mask head.
        linear_init(&mut p, "mask.q1", dq, dq, &mut rng);
        linear_init(&mut p, "mask.q2", dq, dq, &mut rng);
        linear_init(&mut p, "mask.t", dq, dq, &mut rng);
        // Classifier.
        linear_init(&mut p, "cls.fc1", dq, dq, &mut rng);
        linear_init(&mut p, "cls.fc2", dq, cfg.n_classes + 1, &mut rng);
        // Affordance-domain conversion: one more self-attention + MLP.
        for w in ["wq", "wk", "wv", "wo"] {
            p.init_linear(&format!("gdom.self.{w}"), dq, dq, &mut rng);
        }
        p.init_zeros("gdom.self.bo", 1, dq);
        for ln in ["ln1", "ln2"] {
            p.init_ones(&format!("gdom.{ln}.gamma"), 1, dq);
            p.init_zeros(&format!("gdom.{ln}.beta"), 1, dq);
        }
        linear_init(&mut p, "gdom.mlp.fc1", dq, 2 * dq, &mut rng);
        linear_init(&mut p, "gdom.mlp.fc2", 2 * dq, dq, &mut rng);
        // Interpolation module.
        linear_init(&mut p, "interp.nb", dq + 4, dq, &mut rng);
        linear_init(&mut p, "interp.fuse1", dv + dq, dq, &mut rng);
        linear_init(&mut p, "interp.fuse2", dq, dq, &mut rng);
        // Implicit decoders: shared trunk shape, separate heads.
        let din = 2 * fdim + 2 * dq;
        for dec in ["occ", "gr"] {
            linear_init(&mut p, &format!("{dec}.in"), din, dq, &mut rng);
            for b in 0..cfg.decoder_blocks {
                linear_init(&mut p, &format!("{dec}.res{b}.fc1"), dq, dq, &mut rng);
                linear_init(&mut p, &format!("{dec}.res{b}.fc2"), dq, dq, &mut rng);
            }
        }
        linear_init(&mut p, "occ.out", dq, 1, &mut rng);
        linear_init(&mut p, "gr.aff", dq, cfg.n_alpha, &mut rng);
        linear_init(&mut p, "gr.width", dq, 1, &mut rng);

        Ok(Model { cfg, params: p })
    }

    pub fn from_parts(cfg: NetConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(Model { cfg, params })
    }

    fn linear(&self, bind: &Bindings, name: &str, x: &Tensor) -> Tensor {
        x.matmul(&bind.param(&format!("{name}.w")))
            .add_row_broadcast(&bind.param(&format!("{name}.b")))
    }

    fn fourier_rows(&self, bind: &Bindings, points: &[Vec3]) -> Tensor {
        let fdim = self.cfg.fourier_dim();
        let mut data = Vec::with_capacity(points.len() * fdim);
        for p in points {
            data.extend(fourier_encode(*p, self.cfg.fourier_freqs, self.cfg.fourier_scale));
        }
        bind.tape.constant(points.len(), fdim, data)
    }

    /// Multi-head attention. `mask_bias`, when given, is a [rows(q) x rows(kv)]
    /// additive bias applied to every head's scores before the softmax.
    /// Returns the output rows and the per-head attention weights.
    fn attention(
        &self,
        bind: &Bindings,
        prefix: &str,
        q_in: &Tensor,
        k_in: &Tensor,
        v_in: &Tensor,
        mask_bias: Option<&[f64]>,
    ) -> (Tensor, Vec<Tensor>) {
        let dq = self.cfg.d_q;
        let heads = self.cfg.n_heads;
        let dh = dq / heads;
        let q = q_in.matmul(&bind.param(&format!("{prefix}.wq")));
        let k = k_in.matmul(&bind.param(&format!("{prefix}.wk")));
        let v = v_in.matmul(&bind.param(&format!("{prefix}.wv")));
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctxs = Vec::with_capacity(heads);
        let mut attns = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice_cols(h * dh, dh);
            let kh = k.slice_cols(h * dh, dh);
            let vh = v.slice_cols(h * dh, dh);
            let attn = qh.matmul_nt(&kh).scale(scale).softmax_rows(mask_bias);
            ctxs.push(attn.matmul(&vh));
            attns.push(attn);
        }
        let mut cat = ctxs[0].clone();
        for c in &ctxs[1..] {
            cat = cat.concat_cols(c);
        }
        let out = cat
            .matmul(&bind.param(&format!("{prefix}.wo")))
            .add_row_broadcast(&bind.param(&format!("{prefix}.bo")));
        (out, attns)
    }

    fn layer_norm(&self, bind: &Bindings, prefix: &str, x: &Tensor) -> Tensor {
        x.layer_norm(
            &bind.param(&format!("{prefix}.gamma")),
            &bind.param(&format!("{prefix}.beta")),
            1e-5,
        )
    }

    // -----------------------------------------------------------------------
    // Encoder
    // -----------------------------------------------------------------------

    /// Sparse surface tokens and dense volumetric features for a cloud.
    /// Also returns the input-point -> token index map.
    pub fn encode(
        &self,
        bind: &Bindings,
        pc: &PointCloud,
    ) -> Result<(SparseTokens, DenseGrid, Vec<usize>)> {
        if pc.is_empty() {
            return Err(Error::invalid_argument("cannot encode an empty cloud"));
        }
        let cell = self.cfg.sparse_cell;

        // Group points by voxel; token order is the sorted key order so the
        // result does not depend on input point order.
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in pc.points.iter().enumerate() {
            let key = (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            );
            cells.entry(key).or_default().push(i);
        }
        let mut keys: Vec<_> = cells.keys().copied().collect();
        keys.sort_unstable();
        let n_tokens = keys.len();

        let mut token_coords = Vec::with_capacity(n_tokens);
        let mut point_token = vec![0usize; pc.len()];
        let mut seg_offsets = Vec::with_capacity(n_tokens + 1);
        seg_offsets.push(0usize);
        let mut offsets_data = Vec::with_capacity(pc.len() * 3);
        for (ti, key) in keys.iter().enumerate() {
            let center = Vec3::new(
                (key.0 as f64 + 0.5) * cell,
                (key.1 as f64 + 0.5) * cell,
                (key.2 as f64 + 0.5) * cell,
            );
            token_coords.push(center);
            let mut members = cells.remove(key).unwrap();
            // Deterministic member order regardless of input permutation.
            members.sort_unstable_by(|&a, &b| {
                pc.points[a]
                    .to_array()
                    .partial_cmp(&pc.points[b].to_array())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &i in &members {
                point_token[i] = ti;
                let off = pc.points[i] - center;
                offsets_data.extend([off.x / cell, off.y / cell, off.z / cell]);
            }
            seg_offsets.push(seg_offsets.last().unwrap() + members.len());
        }

        // Per-point MLP over in-voxel offsets, max-pooled per voxel.
        let offsets_t = bind.tape.constant(pc.len(), 3, offsets_data);
        let point_h = self.linear(bind, "enc.point", &offsets_t).gelu();
        let pooled = point_h.segment_max(Rc::new(seg_offsets));
        let mut feats = self.linear(bind, "enc.vox", &pooled).gelu();

        // Two rounds of message passing over the 6-neighborhood of occupied
        // voxels.
        let key_index: HashMap<(i64, i64, i64), usize> =
            keys.iter().copied().enumerate().map(|(i, k)| (k, i)).collect();
        let mut nbr_offsets = Vec::with_capacity(n_tokens + 1);
        let mut nbr_idx = Vec::new();
        let mut nbr_w = Vec::new();
        nbr_offsets.push(0usize);
        for key in &keys {
            let mut found = Vec::new();
            for (dx, dy, dz) in
                [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
            {
                if let Some(&j) = key_index.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                    found.push(j);
                }
            }
            let w = if found.is_empty() { 0.0 } else { 1.0 / found.len() as f64 };
            for j in found {
                nbr_idx.push(j);
                nbr_w.push(w);
            }
            nbr_offsets.push(nbr_idx.len());
        }
        let nbr_offsets = Rc::new(nbr_offsets);
        let nbr_idx = Rc::new(nbr_idx);
        let nbr_w = Rc::new(nbr_w);
        for r in 0..2 {
            let neighborhood = feats.gather_csr(nbr_offsets.clone(), nbr_idx.clone(), nbr_w.clone());
            let mixed = self
                .linear(bind, &format!("enc.mp{r}"), &feats.concat_cols(&neighborhood))
                .gelu();
            feats = feats.add(&mixed);
        }

        let dense = self.encode_dense(bind, pc)?;
        Ok((SparseTokens { coords: token_coords, feats }, dense, point_token))
    }

    fn dense_cell(&self) -> Vec3 {
        let g = self.cfg.dense_res as f64;
        let ext = self.cfg.workspace.extent();
        Vec3::new(ext.x / g, ext.y / g, ext.z / g)
    }

    fn encode_dense(&self, bind: &Bindings, pc: &PointCloud) -> Result<DenseGrid> {
        let g = self.cfg.dense_res;
        let origin = self.cfg.workspace.min;
        let cell = self.dense_cell();
        let n_cells = g * g * g;

        let mut counts = vec![0usize; n_cells];
        for p in &pc.points {
            let ix = (((p.x - origin.x) / cell.x).floor() as i64).clamp(0, g as i64 - 1) as usize;
            let iy = (((p.y - origin.y) / cell.y).floor() as i64).clamp(0, g as i64 - 1) as usize;
            let iz = (((p.z - origin.z) / cell.z).floor() as i64).clamp(0, g as i64 - 1) as usize;
            counts[ix + g * (iy + g * iz)] += 1;
        }
        let max_count = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let mut input = Vec::with_capacity(n_cells * 2);
        for &c in &counts {
            input.push((1.0 + c as f64).ln() / (1.0 + max_count).ln());
            input.push(if c > 0 { 1.0 } else { 0.0 });
        }
        let input_t = bind.tape.constant(n_cells, 2, input);
        let mut h = self.linear(bind, "dense.in", &input_t).gelu();

        // Three dilated face-neighbor mean stages: multi-scale context that
        // stays shift-equivariant one cell at a time in the interior.
        for (s, dil) in [1usize, 2, 3].iter().enumerate() {
            let mut offsets = Vec::with_capacity(n_cells + 1);
            let mut idx = Vec::new();
            let mut w = Vec::new();
            offsets.push(0usize);
            let d = *dil as i64;
            for iz in 0..g as i64 {
                for iy in 0..g as i64 {
                    for ix in 0..g as i64 {
                        let mut found = Vec::new();
                        for (dx, dy, dz) in
                            [(d, 0, 0), (-d, 0, 0), (0, d, 0), (0, -d, 0), (0, 0, d), (0, 0, -d)]
                        {
                            let (jx, jy, jz) = (ix + dx, iy + dy, iz + dz);
                            if jx >= 0
                                && jy >= 0
                                && jz >= 0
                                && (jx as usize) < g
                                && (jy as usize) < g
                                && (jz as usize) < g
                            {
                                found.push(jx as usize + g * (jy as usize + g * jz as usize));
                            }
                        }
                        let weight = 1.0 / found.len().max(1) as f64;
                        for j in found {
                            idx.push(j);
                            w.push(weight);
                        }
                        offsets.push(idx.len());
                    }
                }
            }
            let mean = h.gather_csr(Rc::new(offsets), Rc::new(idx), Rc::new(w));
            let mixed = self
                .linear(bind, &format!("dense.s{s}"), &h.concat_cols(&mean))
                .gelu();
            h = h.add(&mixed);
        }
        let feats = self.linear(bind, "dense.out", &h).gelu();
        Ok(DenseGrid { origin, cell, dims: (g, g, g), feats })
    }

    /// Nearest dense cell of a point; boundary clamped, exact-center ties go
    /// to the lower linear index.
    fn nearest_dense_cell(&self, dense: &DenseGrid, p: Vec3) -> usize {
        let (gx, gy, gz) = dense.dims;
        let pick = |coord: f64, o: f64, c: f64, g: usize| -> usize {
            let t = (coord - o) / c - 0.5;
            (t - 0.5).ceil().clamp(0.0, g as f64 - 1.0) as usize
        };
        let ix = pick(p.x, dense.origin.x, dense.cell.x, gx);
        let iy = pick(p.y, dense.origin.y, dense.cell.y, gy);
        let iz = pick(p.z, dense.origin.z, dense.cell.z, gz);
        ix + gx * (iy + gy * iz)
    }

    /// Enrich each surface token with its nearest dense cell's features and
    /// project to the query dimension.
    pub fn aggregate_tokens(
        &self,
        bind: &Bindings,
        sparse: &SparseTokens,
        dense: &DenseGrid,
    ) -> Tensor {
        let idx: Vec<usize> = sparse
            .coords
            .iter()
            .map(|c| self.nearest_dense_cell(dense, *c))
            .collect();
        let dense_rows = dense.feats.gather_rows(&idx);
        self.linear(bind, "agg", &sparse.feats.concat_cols(&dense_rows)).gelu()
    }

    // -----------------------------------------------------------------------
    // Query refinement
    // -----------------------------------------------------------------------

    /// Anchor positions via farthest-point sampling over the token coords.
    /// When there are fewer tokens than queries the picks cycle.
    pub fn init_anchors(&self, token_coords: &[Vec3], seed: u64) -> Vec<Vec3> {
        let n = self.cfg.n_queries;
        let cloud = PointCloud::from_points(token_coords.to_vec());
        let m = n.min(token_coords.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = rng.gen_range(0..token_coords.len());
        let picks = farthest_point_sampling_from(&cloud, m, start).expect("fps over tokens");
        (0..n).map(|i| token_coords[picks[i % m]]).collect()
    }

    /// Iterative masked cross-attention and self-attention over the queries.
    /// Returns the refined queries and each round's mask logits.
    pub fn refine_queries(
        &self,
        bind: &Bindings,
        anchors: &[Vec3],
        tokens: &Tensor,
        token_coords: &[Vec3],
    ) -> (Tensor, Vec<Tensor>) {
        let nq = self.cfg.n_queries;
        let nt = token_coords.len();
        let anchor_enc = self.fourier_rows(bind, anchors);
        let mut queries = self.linear(bind, "qinit", &anchor_enc).gelu();
        let q_pos = self.linear(bind, "qpos", &anchor_enc);
        let tok_pos = self.linear(bind, "tokpos", &self.fourier_rows(bind, token_coords));
        let kv = tokens.add(&tok_pos);

        let mut mask_logits: Vec<Tensor> = Vec::with_capacity(self.cfg.n_refine_rounds);
        for r in 0..self.cfg.n_refine_rounds {
            // Round 0 attends everywhere; later rounds threshold the previous
            // round's mask logits, falling back to all-pass for empty masks.
            let bias: Option<Vec<f64>> = if r == 0 {
                None
            } else {
                let prev = mask_logits[r - 1].values();
                let mut b = vec![0.0; nq * nt];
                for q in 0..nq {
                    let row = &prev[q * nt..(q + 1) * nt];
                    if row.iter().any(|&l| l > 0.0) {
                        for t in 0..nt {
                            if row[t] <= 0.0 {
                                b[q * nt + t] = -1e9;
                            }
                        }
                    }
                }
                Some(b)
            };
            let (cross, _) = self.attention(
                bind,
                &format!("ref{r}.cross"),
                &queries.add(&q_pos),
                &kv,
                tokens,
                bias.as_deref(),
            );
            queries = self.layer_norm(bind, &format!("ref{r}.ln1"), &queries.add(&cross));

            let (selfa, _) = self.attention(
                bind,
                &format!("ref{r}.self"),
                &queries.add(&q_pos),
                &queries.add(&q_pos),
                &queries,
                None,
            );
            queries = self.layer_norm(bind, &format!("ref{r}.ln2"), &queries.add(&selfa));

            let mlp = self.linear(
                bind,
                &format!("ref{r}.mlp.fc2"),
                &self.linear(bind, &format!("ref{r}.mlp.fc1"), &queries).gelu(),
            );
            queries = self.layer_norm(bind, &format!("ref{r}.ln3"), &queries.add(&mlp));

            // Fresh mask logits from the refined queries.
            let mq = self.linear(bind, "mask.q2", &self.linear(bind, "mask.q1", &queries).gelu());
            let mt = self.linear(bind, "mask.t", tokens);
            mask_logits.push(mq.matmul_nt(&mt));
        }
        (queries, mask_logits)
    }

    /// Class logits per query (n_classes + 1, no-object last).
    pub fn classify_logits(&self, bind: &Bindings, queries: &Tensor) -> Tensor {
        self.linear(bind, "cls.fc2", &self.linear(bind, "cls.fc1", queries).gelu())
    }

    /// Final inter-query self-attention + MLP that converts queries to the
    /// affordance domain.
    pub fn to_grasp_domain(&self, bind: &Bindings, queries: &Tensor, anchors: &[Vec3]) -> Tensor {
        let q_pos = self.linear(bind, "qpos", &self.fourier_rows(bind, anchors));
        let (selfa, _) = self.attention(
            bind,
            "gdom.self",
            &queries.add(&q_pos),
            &queries.add(&q_pos),
            queries,
            None,
        );
        let h = self.layer_norm(bind, "gdom.ln1", &queries.add(&selfa));
        let mlp = self.linear(bind, "gdom.mlp.fc2", &self.linear(bind, "gdom.mlp.fc1", &h).gelu());
        self.layer_norm(bind, "gdom.ln2", &h.add(&mlp))
    }

    // -----------------------------------------------------------------------
    // Interpolation and decoders
    // -----------------------------------------------------------------------

    /// Per-point features: trilinear dense interpolation concatenated with a
    /// small set network over the k nearest tokens (feature, relative offset,
    /// distance), fused by an MLP. The per-neighbor offsets keep points on
    /// opposite sides of a surface distinguishable.
    /// Trilinear interpolation of the dense features at arbitrary points
    /// (cell-center lattice, borders clamped).
    pub fn trilinear(&self, dense: &DenseGrid, xs: &[Vec3]) -> Tensor {
        let (gx, gy, gz) = dense.dims;
        let mut tri_offsets = Vec::with_capacity(xs.len() + 1);
        let mut tri_idx = Vec::with_capacity(xs.len() * 8);
        let mut tri_w = Vec::with_capacity(xs.len() * 8);
        tri_offsets.push(0usize);
        for x in xs {
            let u = [
                ((x.x - dense.origin.x) / dense.cell.x - 0.5).clamp(0.0, (gx - 1) as f64),
                ((x.y - dense.origin.y) / dense.cell.y - 0.5).clamp(0.0, (gy - 1) as f64),
                ((x.z - dense.origin.z) / dense.cell.z - 0.5).clamp(0.0, (gz - 1) as f64),
            ];
            let i0 = [
                (u[0].floor() as usize).min(gx.saturating_sub(2)),
                (u[1].floor() as usize).min(gy.saturating_sub(2)),
                (u[2].floor() as usize).min(gz.saturating_sub(2)),
            ];
            let f = [u[0] - i0[0] as f64, u[1] - i0[1] as f64, u[2] - i0[2] as f64];
            for dz in 0..2usize {
                for dy in 0..2usize {
                    for dx in 0..2usize {
                        let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                            * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                            * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                        tri_idx.push((i0[0] + dx) + gx * ((i0[1] + dy) + gy * (i0[2] + dz)));
                        tri_w.push(w);
                    }
                }
            }
            tri_offsets.push(tri_idx.len());
        }
        dense
            .feats
            .gather_csr(Rc::new(tri_offsets), Rc::new(tri_idx), Rc::new(tri_w))
    }

    pub fn interpolate_features(
        &self,
        bind: &Bindings,
        xs: &[Vec3],
        tokens: &Tensor,
        token_coords: &[Vec3],
        dense: &DenseGrid,
    ) -> Tensor {
        let n = xs.len();
        assert!(n > 0, "interpolate_features needs at least one point");
        let tri = self.trilinear(dense, xs);

        // kNN token gather with relative offsets and distances.
        let k = self.cfg.knn_k.min(token_coords.len());
        let grid = KnnGrid::build_auto(token_coords);
        let mut gather_idx = Vec::with_capacity(n * k);
        let mut extras = Vec::with_capacity(n * k * 4);
        let mut seg = Vec::with_capacity(n + 1);
        seg.push(0usize);
        let scale = 1.0 / self.cfg.sparse_cell;
        for x in xs {
            for (ti, dist) in grid.knn(*x, k, None) {
                gather_idx.push(ti);
                let off = *x - token_coords[ti];
                extras.extend([off.x * scale, off.y * scale, off.z * scale, dist * scale]);
            }
            seg.push(gather_idx.len());
        }
        let nb_feats = tokens.gather_rows(&gather_idx);
        let nb_extras = bind.tape.constant(n * k, 4, extras);
        let nb_h = self
            .linear(bind, "interp.nb", &nb_feats.concat_cols(&nb_extras))
            .gelu();
        let pooled = nb_h.segment_max(Rc::new(seg));

        let fused = self
            .linear(bind, "interp.fuse1", &tri.concat_cols(&pooled))
            .gelu();
        self.linear(bind, "interp.fuse2", &fused)
    }

    fn decode_trunk(&self, bind: &Bindings, prefix: &str, input: &Tensor) -> Tensor {
        let mut h = self.linear(bind, &format!("{prefix}.in"), input).gelu();
        for b in 0..self.cfg.decoder_blocks {
            let t = self.linear(
                bind,
                &format!("{prefix}.res{b}.fc2"),
                &self.linear(bind, &format!("{prefix}.res{b}.fc1"), &h).gelu(),
            );
            h = h.add(&t);
        }
        h.gelu()
    }

    fn decode_input(
        &self,
        bind: &Bindings,
        xs: &[Vec3],
        anchors: &[Vec3],
        query_rows: &Tensor,
        feats: &Tensor,
    ) -> Tensor {
        let xe = self.fourier_rows(bind, xs);
        let ae = self.fourier_rows(bind, anchors);
        xe.concat_cols(&ae).concat_cols(query_rows).concat_cols(feats)
    }

    /// Occupancy logits for points under given query rows ([n x d_q], one row
    /// per point). Probability = sigmoid(logit).
    pub fn decode_occupancy(
        &self,
        bind: &Bindings,
        xs: &[Vec3],
        anchors: &[Vec3],
        query_rows: &Tensor,
        feats: &Tensor,
    ) -> Tensor {
        let input = self.decode_input(bind, xs, anchors, query_rows, feats);
        let h = self.decode_trunk(bind, "occ", &input);
        self.linear(bind, "occ.out", &h)
    }

    /// Affordance logits ([n x n_alpha]) and gripper widths ([n x 1], in
    /// [0, w_max] via a scaled sigmoid).
    pub fn decode_grasp(
        &self,
        bind: &Bindings,
        xs: &[Vec3],
        anchors: &[Vec3],
        grasp_query_rows: &Tensor,
        feats: &Tensor,
    ) -> (Tensor, Tensor) {
        let input = self.decode_input(bind, xs, anchors, grasp_query_rows, feats);
        let h = self.decode_trunk(bind, "gr", &input);
        let aff = self.linear(bind, "gr.aff", &h);
        let width = self.linear(bind, "gr.width", &h).sigmoid().scale(self.cfg.w_max);
        (aff, width)
    }

    /// Full forward pass: encode, aggregate, spawn and refine queries,
    /// classify, and convert to the affordance domain.
    pub fn forward(&self, pc: &PointCloud, anchor_seed: u64) -> Result<ForwardPass<'_>> {
        let bind = Bindings::new(Tape::new(), &self.params);
        let (sparse, dense, point_token) = self.encode(&bind, pc)?;
        let tokens = self.aggregate_tokens(&bind, &sparse, &dense);
        let anchors = self.init_anchors(&sparse.coords, anchor_seed);
        let (queries, mask_logits) = self.refine_queries(&bind, &anchors, &tokens, &sparse.coords);
        let class_logits = self.classify_logits(&bind, &queries);
        let grasp_queries = self.to_grasp_domain(&bind, &queries, &anchors);
        let token_coords = sparse.coords.clone();
        Ok(ForwardPass {
            bind,
            token_coords,
            point_token,
            sparse,
            dense,
            tokens,
            anchors,
            queries,
            grasp_queries,
            mask_logits,
            class_logits,
        })
    }
}

// ---------------------------------------------------------------------------
// Frozen inference artifacts
// ---------------------------------------------------------------------------

/// Detached (no-gradient) forward results for one observation, enough to
/// evaluate the implicit decoders anywhere: per-instance occupancy, grasp
/// affordances, and mask/class decisions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrozenScene {
    pub token_coords: Vec<Vec3>,
    pub token_feats: Vec<f64>,
    pub dense_origin: Vec3,
    pub dense_cell: Vec3,
    pub dense_dims: (usize, usize, usize),
    pub dense_feats: Vec<f64>,
    /// Active (non-no-object) queries.
    pub queries: Vec<InstanceQuery>,
    pub grasp_embeddings: Vec<Vec<f64>>,
    /// Class probabilities per active query.
    pub class_probs: Vec<Vec<f64>>,
    /// Original query index of each active query.
    pub active_indices: Vec<usize>,
    /// Final mask probabilities per active query over the input points.
    pub point_masks: Vec<Vec<f64>>,
    /// Support box per active query (claimed points plus margin); occupancy
    /// is treated as zero outside it.
    pub support: Vec<Aabb>,
    pub point_token: Vec<usize>,
}

impl Model {
    /// Freeze a forward pass for inference: keep only the active queries (the
    /// classifier's argmax is not no-object) and detach all values.
    pub fn freeze(&self, fp: &ForwardPass, pc: &PointCloud) -> FrozenScene {
        let nq = self.cfg.n_queries;
        let nc = self.cfg.n_classes + 1;
        let class_vals = fp.class_logits.values();
        let mask_vals = fp.final_mask_logits().values();
        let nt = fp.token_coords.len();
        let q_vals = fp.queries.values();
        let g_vals = fp.grasp_queries.values();
        let dq = self.cfg.d_q;

        let mut active_indices = Vec::new();
        let mut queries = Vec::new();
        let mut grasp_embeddings = Vec::new();
        let mut class_probs = Vec::new();
        let mut point_masks = Vec::new();
        let mut support = Vec::new();
        for q in 0..nq {
            let row = &class_vals[q * nc..(q + 1) * nc];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
            let argmax = probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if argmax == self.cfg.no_object_class() {
                continue;
            }
            // Per-point mask probability through the point -> token map.
            let mask_row = &mask_vals[q * nt..(q + 1) * nt];
            let pm: Vec<f64> = fp
                .point_token
                .iter()
                .map(|&t| 1.0 / (1.0 + (-mask_row[t]).exp()))
                .collect();
            // Support box over claimed points.
            let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut hi = -lo;
            let mut any = false;
            for (p, &m) in pc.points.iter().zip(&pm) {
                if m > 0.5 {
                    lo = lo.min_comp(*p);
                    hi = hi.max_comp(*p);
                    any = true;
                }
            }
            let anchor = fp.anchors[q];
            let bbox = if any {
                Aabb::new(lo, hi).expand(0.06)
            } else {
                Aabb::new(anchor, anchor).expand(0.08)
            };
            active_indices.push(q);
            queries.push(InstanceQuery {
                embedding: q_vals[q * dq..(q + 1) * dq].to_vec(),
                anchor,
            });
            grasp_embeddings.push(g_vals[q * dq..(q + 1) * dq].to_vec());
            class_probs.push(probs);
            point_masks.push(pm);
            support.push(bbox);
        }

        FrozenScene {
            token_coords: fp.token_coords.clone(),
            token_feats: fp.tokens.values().to_vec(),
            dense_origin: fp.dense.origin,
            dense_cell: fp.dense.cell,
            dense_dims: fp.dense.dims,
            dense_feats: fp.dense.feats.values().to_vec(),
            queries,
            grasp_embeddings,
            class_probs,
            active_indices,
            point_masks,
            support,
            point_token: fp.point_token.clone(),
        }
    }

    fn rebuild_frozen(&self, bind: &Bindings, frozen: &FrozenScene) -> (Tensor, DenseGrid) {
        let nt = frozen.token_coords.len();
        let tokens = bind.tape.constant(nt, self.cfg.d_q, frozen.token_feats.clone());
        let (gx, gy, gz) = frozen.dense_dims;
        let dense = DenseGrid {
            origin: frozen.dense_origin,
            cell: frozen.dense_cell,
            dims: frozen.dense_dims,
            feats: bind
                .tape
                .constant(gx * gy * gz, self.cfg.d_v, frozen.dense_feats.clone()),
        };
        (tokens, dense)
    }

    /// Occupancy probabilities of one active query at a batch of points.
    /// Runs on a fresh constant tape; no gradients.
    pub fn frozen_occupancy(&self, frozen: &FrozenScene, instance: usize, xs: &[Vec3]) -> Vec<f64> {
        if xs.is_empty() {
            return Vec::new();
        }
        let bind = Bindings::new(Tape::new(), &self.params);
        let (tokens, dense) = self.rebuild_frozen(&bind, frozen);
        let q = &frozen.queries[instance];
        let emb = bind.tape.constant(1, self.cfg.d_q, q.embedding.clone());
        let rows = emb.gather_rows(&vec![0; xs.len()]);
        let anchors = vec![q.anchor; xs.len()];
        let feats = self.interpolate_features(&bind, xs, &tokens, &frozen.token_coords, &dense);
        let logits = self.decode_occupancy(&bind, xs, &anchors, &rows, &feats);
        logits.values().iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect()
    }

    /// Affordance probabilities and widths for contacts under one active
    /// query of a frozen scene.
    pub fn frozen_grasp(
        &self,
        frozen: &FrozenScene,
        instance: usize,
        xs: &[Vec3],
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        if xs.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let bind = Bindings::new(Tape::new(), &self.params);
        let (tokens, dense) = self.rebuild_frozen(&bind, frozen);
        let emb = bind
            .tape
            .constant(1, self.cfg.d_q, frozen.grasp_embeddings[instance].clone());
        let rows = emb.gather_rows(&vec![0; xs.len()]);
        let anchors = vec![frozen.queries[instance].anchor; xs.len()];
        let feats = self.interpolate_features(&bind, xs, &tokens, &frozen.token_coords, &dense);
        let (aff, width) = self.decode_grasp(&bind, xs, &anchors, &rows, &feats);
        let av = aff.values();
        let na = self.cfg.n_alpha;
        let probs = (0..xs.len())
            .map(|i| {
                av[i * na..(i + 1) * na]
                    .iter()
                    .map(|&l| 1.0 / (1.0 + (-l).exp()))
                    .collect()
            })
            .collect();
        (probs, width.values().to_vec())
    }
}

/// Per-instance occupancy field backed by a frozen forward pass.
///
/// Outside an instance's support box the occupancy is reported as zero
/// without invoking the decoder, which keeps meshing and collision checks
/// tractable.
pub struct ModelField<'a> {
    pub model: &'a Model,
    pub frozen: &'a FrozenScene,
}

impl OccupancyField for ModelField<'_> {
    fn num_instances(&self) -> usize {
        self.frozen.queries.len()
    }

    fn eval_into(&self, x: Vec3, out: &mut [f64]) {
        for i in 0..self.frozen.queries.len() {
            out[i] = if self.frozen.support[i].contains(x) {
                self.model.frozen_occupancy(self.frozen, i, &[x])[0]
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod model_tests;
