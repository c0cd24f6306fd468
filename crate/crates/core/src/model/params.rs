//! Learnable parameters and their checkpoint format.
//!
//! All parameters live in Euclidean/tangent space; the hyperbolic relation
//! embeddings and curvatures are stored as unconstrained raw tensors and
//! mapped (exponential map, softplus) at use, so plain Adam updates keep
//! every manifold constraint satisfied by construction.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::diff::Tensor;
use crate::error::{EthError, Result};

use super::config::EthConfig;

/// softplus⁻¹(1) = ln(e − 1): raw curvature initial value, so every
/// relation starts at curvature 1.
pub const CURVATURE_RAW_INIT: f64 = 0.5413248546129181;

/// Three-gate GRU weights; inputs and hidden state share dimension `d`,
/// applied in row convention (`X · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_xr: Tensor,
    pub w_hr: Tensor,
    pub b_r: Tensor,
    pub w_xz: Tensor,
    pub w_hz: Tensor,
    pub b_z: Tensor,
    pub w_xn: Tensor,
    pub w_hn: Tensor,
    pub b_n: Tensor,
}

/// Every learnable tensor of the model.
///
/// Shapes (with `|V|` entities, `|E|` base relations, `R = 2|E|` after
/// inverse augmentation, embedding dim `d`, mixing dim `w`):
///
/// | tensor                          | shape    |
/// |---------------------------------|----------|
/// | `entity_emb`                    | `|V|×d`  |
/// | `rel_emb_euclid`, `rel_emb_hyp_raw` | `R×d` |
/// | `rgcn_w1[i]`, `rgcn_w2[i]`      | `d×d`    |
/// | GRU weights / biases            | `d×d` / `1×d` |
/// | `w1_e`                          | `d×d`    |
/// | `w2_e`                          | `2d×d`   |
/// | `w_g`, `w1_g`, `w2_g`           | `d×d`    |
/// | `curvature_raw`, `beta_raw`     | `R×1`    |
/// | `bias_q`, `bias_a`              | `|V|×1`  |
/// | `s_q`                           | `|V|×w`  |
/// | `s_r`                           | `R×w`    |
#[derive(Debug, Clone, PartialEq)]
pub struct EthParams {
    pub entity_emb: Tensor,
    pub rel_emb_euclid: Tensor,
    pub rel_emb_hyp_raw: Tensor,
    pub rgcn_w1: Vec<Tensor>,
    pub rgcn_w2: Vec<Tensor>,
    pub gru: GruParams,
    pub w1_e: Tensor,
    pub b1_e: Tensor,
    pub w2_e: Tensor,
    pub b2_e: Tensor,
    pub w_g: Tensor,
    pub w1_g: Tensor,
    pub w2_g: Tensor,
    pub curvature_raw: Tensor,
    pub bias_q: Tensor,
    pub bias_a: Tensor,
    pub s_q: Tensor,
    pub s_r: Tensor,
    pub beta_raw: Tensor,
}

impl EthParams {
    /// Random initialization: embedding tables Gaussian with std `1/√d`,
    /// weight matrices Glorot-uniform, biases zero, raw curvatures at
    /// [`CURVATURE_RAW_INIT`]. Draw order is fixed, so one seed fully
    /// determines the result.
    pub fn init(config: &EthConfig, vocab: &Vocab, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let (d, w) = (config.d, config.w);
        let nv = vocab.num_entities;
        let nr = vocab.num_relations_augmented();
        let std = 1.0 / (d as f64).sqrt();

        let entity_emb = Tensor::gaussian(nv, d, std, rng);
        let rel_emb_euclid = Tensor::gaussian(nr, d, std, rng);
        let rel_emb_hyp_raw = Tensor::gaussian(nr, d, std, rng);
        let mut rgcn_w1 = Vec::with_capacity(config.layers);
        let mut rgcn_w2 = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            rgcn_w1.push(Tensor::glorot_uniform(d, d, rng));
            rgcn_w2.push(Tensor::glorot_uniform(d, d, rng));
        }
        let gru = GruParams {
            w_xr: Tensor::glorot_uniform(d, d, rng),
            w_hr: Tensor::glorot_uniform(d, d, rng),
            b_r: Tensor::zeros(1, d),
            w_xz: Tensor::glorot_uniform(d, d, rng),
            w_hz: Tensor::glorot_uniform(d, d, rng),
            b_z: Tensor::zeros(1, d),
            w_xn: Tensor::glorot_uniform(d, d, rng),
            w_hn: Tensor::glorot_uniform(d, d, rng),
            b_n: Tensor::zeros(1, d),
        };
        Ok(EthParams {
            entity_emb,
            rel_emb_euclid,
            rel_emb_hyp_raw,
            rgcn_w1,
            rgcn_w2,
            gru,
            w1_e: Tensor::glorot_uniform(d, d, rng),
            b1_e: Tensor::zeros(1, d),
            w2_e: Tensor::glorot_uniform(2 * d, d, rng),
            b2_e: Tensor::zeros(1, d),
            w_g: Tensor::glorot_uniform(d, d, rng),
            w1_g: Tensor::glorot_uniform(d, d, rng),
            w2_g: Tensor::glorot_uniform(d, d, rng),
            curvature_raw: Tensor::filled(nr, 1, CURVATURE_RAW_INIT),
            bias_q: Tensor::zeros(nv, 1),
            bias_a: Tensor::zeros(nv, 1),
            s_q: Tensor::glorot_uniform(nv, w, rng),
            s_r: Tensor::glorot_uniform(nr, w, rng),
            beta_raw: Tensor::zeros(nr, 1),
        })
    }

    /// All-zero tensors with the shapes implied by `(config, vocab)`.
    fn zeros(config: &EthConfig, vocab: &Vocab) -> Result<Self> {
        config.validate()?;
        let (d, w) = (config.d, config.w);
        let nv = vocab.num_entities;
        let nr = vocab.num_relations_augmented();
        Ok(EthParams {
            entity_emb: Tensor::zeros(nv, d),
            rel_emb_euclid: Tensor::zeros(nr, d),
            rel_emb_hyp_raw: Tensor::zeros(nr, d),
            rgcn_w1: vec![Tensor::zeros(d, d); config.layers],
            rgcn_w2: vec![Tensor::zeros(d, d); config.layers],
            gru: GruParams {
                w_xr: Tensor::zeros(d, d),
                w_hr: Tensor::zeros(d, d),
                b_r: Tensor::zeros(1, d),
                w_xz: Tensor::zeros(d, d),
                w_hz: Tensor::zeros(d, d),
                b_z: Tensor::zeros(1, d),
                w_xn: Tensor::zeros(d, d),
                w_hn: Tensor::zeros(d, d),
                b_n: Tensor::zeros(1, d),
            },
            w1_e: Tensor::zeros(d, d),
            b1_e: Tensor::zeros(1, d),
            w2_e: Tensor::zeros(2 * d, d),
            b2_e: Tensor::zeros(1, d),
            w_g: Tensor::zeros(d, d),
            w1_g: Tensor::zeros(d, d),
            w2_g: Tensor::zeros(d, d),
            curvature_raw: Tensor::zeros(nr, 1),
            bias_q: Tensor::zeros(nv, 1),
            bias_a: Tensor::zeros(nv, 1),
            s_q: Tensor::zeros(nv, w),
            s_r: Tensor::zeros(nr, w),
            beta_raw: Tensor::zeros(nr, 1),
        })
    }

    /// Visits every tensor with its canonical name, in canonical order.
    /// This order defines optimizer-state and gradient alignment.
    pub fn for_each(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("entity_emb", &self.entity_emb);
        f("rel_emb_euclid", &self.rel_emb_euclid);
        f("rel_emb_hyp_raw", &self.rel_emb_hyp_raw);
        for (i, (w1, w2)) in self.rgcn_w1.iter().zip(&self.rgcn_w2).enumerate() {
            f(&format!("rgcn_w1.{i}"), w1);
            f(&format!("rgcn_w2.{i}"), w2);
        }
        f("gru.w_xr", &self.gru.w_xr);
        f("gru.w_hr", &self.gru.w_hr);
        f("gru.b_r", &self.gru.b_r);
        f("gru.w_xz", &self.gru.w_xz);
        f("gru.w_hz", &self.gru.w_hz);
        f("gru.b_z", &self.gru.b_z);
        f("gru.w_xn", &self.gru.w_xn);
        f("gru.w_hn", &self.gru.w_hn);
        f("gru.b_n", &self.gru.b_n);
        f("w1_e", &self.w1_e);
        f("b1_e", &self.b1_e);
        f("w2_e", &self.w2_e);
        f("b2_e", &self.b2_e);
        f("w_g", &self.w_g);
        f("w1_g", &self.w1_g);
        f("w2_g", &self.w2_g);
        f("curvature_raw", &self.curvature_raw);
        f("bias_q", &self.bias_q);
        f("bias_a", &self.bias_a);
        f("s_q", &self.s_q);
        f("s_r", &self.s_r);
        f("beta_raw", &self.beta_raw);
    }

    /// Mutable references to every tensor, in the same canonical order as
    /// [`EthParams::for_each`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = vec![
            &mut self.entity_emb,
            &mut self.rel_emb_euclid,
            &mut self.rel_emb_hyp_raw,
        ];
        for (w1, w2) in self.rgcn_w1.iter_mut().zip(self.rgcn_w2.iter_mut()) {
            v.push(w1);
            v.push(w2);
        }
        v.extend([
            &mut self.gru.w_xr,
            &mut self.gru.w_hr,
            &mut self.gru.b_r,
            &mut self.gru.w_xz,
            &mut self.gru.w_hz,
            &mut self.gru.b_z,
            &mut self.gru.w_xn,
            &mut self.gru.w_hn,
            &mut self.gru.b_n,
            &mut self.w1_e,
            &mut self.b1_e,
            &mut self.w2_e,
            &mut self.b2_e,
            &mut self.w_g,
            &mut self.w1_g,
            &mut self.w2_g,
            &mut self.curvature_raw,
            &mut self.bias_q,
            &mut self.bias_a,
            &mut self.s_q,
            &mut self.s_r,
            &mut self.beta_raw,
        ]);
        v
    }

    /// Canonical-order tensor shapes (optimizer state allocation).
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.for_each(&mut |_, t| out.push(t.shape()));
        out
    }

    pub fn tensor_count(&self) -> usize {
        self.shapes().len()
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, t| ok &= t.all_finite());
        ok
    }
}

/// On-disk snapshot: config, vocabulary sizes, and every named tensor.
/// JSON with shortest-round-trip float formatting, so save → load is
/// bit-exact for finite doubles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: EthConfig,
    pub vocab: Vocab,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_params(config: &EthConfig, vocab: &Vocab, params: &EthParams) -> Self {
        let mut tensors = BTreeMap::new();
        params.for_each(&mut |name, t| {
            tensors.insert(name.to_string(), t.clone());
        });
        Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            tensors,
        }
    }

    /// Rebuilds parameters, validating that the stored tensors are exactly
    /// the expected set with the expected shapes.
    pub fn to_params(&self) -> Result<EthParams> {
        let mut params = EthParams::zeros(&self.config, &self.vocab)?;
        let mut missing = Vec::new();
        let mut used = 0usize;
        let mut shape_err = None;
        {
            let mut names = Vec::new();
            params.for_each(&mut |name, t| names.push((name.to_string(), t.shape())));
            let mut slots = params.tensors_mut();
            for ((name, shape), slot) in names.into_iter().zip(slots.iter_mut()) {
                match self.tensors.get(&name) {
                    None => missing.push(name),
                    Some(t) if t.shape() != shape => {
                        shape_err.get_or_insert(format!(
                            "tensor `{name}` has shape {:?}, expected {shape:?}",
                            t.shape()
                        ));
                    }
                    Some(t) => {
                        **slot = t.clone();
                        used += 1;
                    }
                }
            }
        }
        if let Some(msg) = shape_err {
            return Err(EthError::Checkpoint(msg));
        }
        if !missing.is_empty() {
            return Err(EthError::Checkpoint(format!(
                "missing tensors: {}",
                missing.join(", ")
            )));
        }
        if used != self.tensors.len() {
            let expected: std::collections::BTreeSet<String> = {
                let mut s = std::collections::BTreeSet::new();
                params.for_each(&mut |name, _| {
                    s.insert(name.to_string());
                });
                s
            };
            let extra: Vec<&String> = self
                .tensors
                .keys()
                .filter(|k| !expected.contains(*k))
                .collect();
            return Err(EthError::Checkpoint(format!(
                "unexpected tensors: {extra:?}"
            )));
        }
        if !params.all_finite() {
            return Err(EthError::Checkpoint(
                "checkpoint contains non-finite values".to_string(),
            ));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| EthError::Checkpoint(format!("write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| EthError::Checkpoint(format!("read {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_config() -> EthConfig {
        EthConfig {
            d: 8,
            w: 4,
            layers: 2,
            m: 3,
            ..EthConfig::default()
        }
    }

    fn vocab() -> Vocab {
        Vocab::new(5, 3).unwrap()
    }

    #[test]
    fn init_produces_documented_shapes() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let p = EthParams::init(&small_config(), &vocab(), &mut rng).unwrap();
        assert_eq!(p.entity_emb.shape(), (5, 8));
        assert_eq!(p.rel_emb_euclid.shape(), (6, 8));
        assert_eq!(p.rel_emb_hyp_raw.shape(), (6, 8));
        assert_eq!(p.rgcn_w1.len(), 2);
        assert_eq!(p.rgcn_w1[0].shape(), (8, 8));
        assert_eq!(p.w2_e.shape(), (16, 8));
        assert_eq!(p.curvature_raw.shape(), (6, 1));
        assert_eq!(p.bias_q.shape(), (5, 1));
        assert_eq!(p.s_q.shape(), (5, 4));
        assert_eq!(p.s_r.shape(), (6, 4));
        assert!(p.all_finite());
    }

    #[test]
    fn raw_curvature_starts_at_softplus_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let p = EthParams::init(&small_config(), &vocab(), &mut rng).unwrap();
        for &raw in p.curvature_raw.data() {
            let c = raw.max(0.0) + (-raw.abs()).exp().ln_1p();
            assert!((c - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = EthParams::init(
            &small_config(),
            &vocab(),
            &mut ChaCha12Rng::seed_from_u64(7),
        )
        .unwrap();
        let b = EthParams::init(
            &small_config(),
            &vocab(),
            &mut ChaCha12Rng::seed_from_u64(7),
        )
        .unwrap();
        assert_eq!(a, b);
        let c = EthParams::init(
            &small_config(),
            &vocab(),
            &mut ChaCha12Rng::seed_from_u64(8),
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn visitor_and_mut_access_agree_on_order() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut p = EthParams::init(&small_config(), &vocab(), &mut rng).unwrap();
        let mut visited = Vec::new();
        p.for_each(&mut |name, t| visited.push((name.to_string(), t.clone())));
        let muts = p.tensors_mut();
        assert_eq!(visited.len(), muts.len());
        for ((_, t), m) in visited.iter().zip(&muts) {
            assert_eq!(&t, m);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let cfg = small_config();
        let vb = vocab();
        let p = EthParams::init(&cfg, &vb, &mut rng).unwrap();
        Checkpoint::from_params(&cfg, &vb, &p).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.config, cfg);
        assert_eq!(loaded.vocab, vb);
        let p2 = loaded.to_params().unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn checkpoint_rejects_missing_and_misshapen_tensors() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cfg = small_config();
        let vb = vocab();
        let p = EthParams::init(&cfg, &vb, &mut rng).unwrap();
        let mut ck = Checkpoint::from_params(&cfg, &vb, &p);
        ck.tensors.remove("w_g");
        assert!(matches!(ck.to_params(), Err(EthError::Checkpoint(_))));

        let mut ck = Checkpoint::from_params(&cfg, &vb, &p);
        ck.tensors.insert("w_g".into(), Tensor::zeros(2, 2));
        assert!(matches!(ck.to_params(), Err(EthError::Checkpoint(_))));

        let mut ck = Checkpoint::from_params(&cfg, &vb, &p);
        ck.tensors.insert("bogus".into(), Tensor::zeros(1, 1));
        assert!(matches!(ck.to_params(), Err(EthError::Checkpoint(_))));
    }

    #[test]
    fn corrupted_checkpoint_file_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(EthError::Checkpoint(_))
        ));
    }
}
