//! The denoising network: atom, bond, graph and neighborhood encodings,
//! pairwise attention biases, an invariant and an equivariant transformer
//! channel per layer, and output heads for features, bonds and coordinates.

mod config;
mod geometry;
mod params;

pub use config::{ModelConfig, Mode};
pub use geometry::{cosine_cutoff, Geometry, RadialBasis, Structure, WEIGHT_SCALE};
pub use params::{Binding, Group, ParamStore};

use rand::Rng as _;
use thiserror::Error;

use crate::molecule::{AtomTable, BondGraph, GRAPH_FEATURE_WIDTH};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("mode {mode} needs {missing}")]
    MissingModality { mode: Mode, missing: &'static str },
    #[error("invalid model input: {0}")]
    Input(String),
}

/// Noisy molecule as seen by the network.
#[derive(Debug, Clone)]
pub struct ModelInput {
    /// `[n, d]` atom features.
    pub h: Tensor,
    /// Diffusion time divided by the step count.
    pub t_norm: f64,
    /// Row-major `n × n` bond categories, when 2D structure is available.
    pub edges: Option<Vec<usize>>,
    /// `[n, 3]` coordinates, when 3D structure is available.
    pub x: Option<Tensor>,
}

impl ModelInput {
    pub fn n_atoms(&self) -> usize {
        self.h.shape()[0]
    }
}

/// Tape handles of the network outputs.
#[derive(Debug, Clone, Copy)]
pub struct RawOutput {
    /// `[n, d]`
    pub h: Var,
    /// `[n, n, b]` symmetric logits.
    pub e_logits: Option<Var>,
    /// `[n, n, b]` softmax of the logits.
    pub e_prob: Option<Var>,
    /// `[n, 3]`
    pub x: Option<Var>,
}

/// Plain-value copy of [`RawOutput`].
#[derive(Debug, Clone)]
pub struct OutputValues {
    pub h: Tensor,
    pub e_prob: Option<Tensor>,
    pub x: Option<Tensor>,
}

impl RawOutput {
    pub fn values(&self, tape: &Tape) -> OutputValues {
        OutputValues {
            h: tape.value(self.h).clone(),
            e_prob: self.e_prob.map(|v| tape.value(v).clone()),
            x: self.x.map(|v| tape.value(v).clone()),
        }
    }
}

/// Dropout source for one forward pass; `None` disables dropout.
pub type DropoutRng<'r> = Option<&'r mut Rng>;

#[derive(Debug, Clone)]
pub struct Muformer {
    pub config: ModelConfig,
    pub params: ParamStore,
    basis: RadialBasis,
    table: AtomTable,
}

/// Keeps layer normalization finite on constant rows.
const LAYER_NORM_EPS: f64 = 1e-5;

struct Ctx<'t, 'p, 'r> {
    tape: &'t mut Tape,
    bind: Binding<'p>,
    dropout: Option<(f64, &'r mut Rng)>,
}

impl Ctx<'_, '_, '_> {
    fn lin(&mut self, name: &str, x: Var) -> Result<Var, TensorError> {
        self.bind.linear(self.tape, name, x)
    }

    fn project(&mut self, name: &str, x: Var) -> Result<Var, TensorError> {
        self.bind.project(self.tape, name, x)
    }

    fn c(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        self.tape.reshape(x, shape)
    }

    fn drop(&mut self, x: Var) -> Result<Var, TensorError> {
        let Some((rate, rng)) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if *rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - *rate;
        let shape = self.tape.shape(x).to_vec();
        let mask = Tensor::from_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }

    /// Pair averaging over the first two axes.
    /// Normalizes each row of `[n, f]` to zero mean and unit variance, then
    /// applies the learned gain and shift.
    fn layer_norm(&mut self, name: &str, x: Var) -> Result<Var, TensorError> {
        let n = self.tape.shape(x)[0];
        let mean = self.tape.mean(x, 1)?;
        let mean = self.tape.reshape(mean, &[n, 1])?;
        let centered = self.tape.sub(x, mean)?;
        let sq = self.tape.square(centered);
        let var = self.tape.mean(sq, 1)?;
        let var = self.tape.add_scalar(var, LAYER_NORM_EPS);
        let sd = self.tape.sqrt(var);
        let sd = self.tape.reshape(sd, &[n, 1])?;
        let unit = self.tape.div(centered, sd)?;
        let g = self.bind.var(self.tape, &format!("{name}.g"));
        let b = self.bind.var(self.tape, &format!("{name}.b"));
        let scaled = self.tape.mul(unit, g)?;
        self.tape.add(scaled, b)
    }

    fn symmetrize(&mut self, x: Var) -> Result<Var, TensorError> {
        let xt = self.tape.transpose_pairs(x)?;
        let s = self.tape.add(x, xt)?;
        Ok(self.tape.scale(s, 0.5))
    }
}

/// Everything constant within one forward pass.
struct Prepared {
    n: usize,
    hin: Tensor,
    structure: Option<Structure>,
    geometry: Option<Geometry>,
    x: Option<Tensor>,
}

impl Muformer {
    /// Fresh network with seed-deterministic initialization.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Input)?;
        let params = build_params(&config, rng);
        Ok(Self::from_params(config, params))
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Self {
        let basis = RadialBasis::new(config.rbf_count, config.cutoff);
        Self {
            config,
            params,
            basis,
            table: AtomTable::default(),
        }
    }

    pub fn basis(&self) -> &RadialBasis {
        &self.basis
    }

    fn prepare(&self, input: &ModelInput, mode: Mode) -> Result<Prepared, ModelError> {
        let cfg = &self.config;
        let n = input.n_atoms();
        let d = cfg.feature_width();
        if input.h.shape() != [n, d] {
            return Err(ModelError::Input(format!(
                "atom features have shape {:?}, expected [{n}, {d}]",
                input.h.shape()
            )));
        }
        let graph = if mode.uses_2d() {
            let e = input.edges.as_ref().ok_or(ModelError::MissingModality {
                mode,
                missing: "bond categories",
            })?;
            if e.len() != n * n || e.iter().any(|&c| c >= cfg.bond_categories) {
                return Err(ModelError::Input("bond categories malformed".into()));
            }
            Some(BondGraph::from_categories(n, e))
        } else {
            None
        };
        let x = if mode.uses_3d() {
            let x = input.x.clone().ok_or(ModelError::MissingModality {
                mode,
                missing: "coordinates",
            })?;
            if x.shape() != [n, 3] {
                return Err(ModelError::Input(format!("coordinates have shape {:?}", x.shape())));
            }
            Some(x)
        } else {
            None
        };
        let hin = Tensor::from_fn([n, d + 1], |k| {
            let (i, c) = (k / (d + 1), k % (d + 1));
            if c < d {
                input.h.get(&[i, c])
            } else {
                input.t_norm
            }
        });
        let structure = graph.as_ref().map(|g| {
            let weights = self.atom_weights(&input.h);
            Structure::new(g, &weights, cfg.bond_categories, cfg.max_spd, cfg.max_path)
        });
        let geometry = x.as_ref().map(|x| {
            let bonds = if mode == Mode::Joint { graph.as_ref() } else { None };
            Geometry::new(x, &self.basis, cfg.cutoff, bonds)
        });
        Ok(Prepared {
            n,
            hin,
            structure,
            geometry,
            x,
        })
    }

    /// Mass of each atom from the largest entry of its type block.
    fn atom_weights(&self, h: &Tensor) -> Vec<f64> {
        let types = self.config.layout.types.min(self.table.len());
        if types == 0 {
            return vec![0.0; h.shape()[0]];
        }
        (0..h.shape()[0])
            .map(|i| {
                let best = (0..types)
                    .fold(0, |b, k| if h.get(&[i, k]) > h.get(&[i, b]) { k } else { b });
                self.table.weight(best)
            })
            .collect()
    }

    /// Records the full network on `tape`.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape,
        input: &ModelInput,
        mode: Mode,
        dropout: DropoutRng<'_>,
    ) -> Result<(RawOutput, Binding<'p>), ModelError> {
        let prep = self.prepare(input, mode)?;
        let rate = self.config.dropout;
        let mut ctx = Ctx {
            tape,
            bind: Binding::new(&self.params),
            dropout: dropout.map(|r| (rate, r)),
        };
        let out = self.run(&mut ctx, &prep, mode)?;
        Ok((out, ctx.bind))
    }

    /// Forward pass returning plain values, dropout off.
    pub fn predict(&self, input: &ModelInput, mode: Mode) -> Result<OutputValues, ModelError> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, input, mode, None)?;
        Ok(out.values(&tape))
    }

    fn run(&self, c: &mut Ctx, p: &Prepared, mode: Mode) -> Result<RawOutput, ModelError> {
        let cfg = &self.config;
        let (n, f) = (p.n, cfg.atom_width);
        let hin = c.c(p.hin.clone());

        // encodings
        let mut z1 = c.lin("enc.atom1", hin)?;
        let (z2, z_e, z_m, phi2d) = match &p.structure {
            Some(s) if mode.uses_2d() => {
                let deg = c.c(s.degree.clone());
                let din = c.project("enc.in_deg", deg)?;
                let dout = c.project("enc.out_deg", deg)?;
                z1 = c.tape.add(z1, din)?;
                z1 = c.tape.add(z1, dout)?;
                let z2 = self.encode_neighborhood_2d(c, hin, s, n)?;
                let z_e = self.encode_bonds(c, hin, s, n)?;
                let g = c.c(s.graph.clone());
                let z_m = c.lin("graph", g)?;
                let phi = self.bias_2d(c, s, n)?;
                (Some(z2), Some(z_e), Some(z_m), Some(phi))
            }
            _ => (None, None, None, None),
        };
        let (z3, phi3d) = match &p.geometry {
            Some(g) if mode.uses_3d() => {
                let z3 = self.encode_neighborhood_3d(c, hin, g, n)?;
                let phi = self.bias_3d(c, g)?;
                (Some(z3), Some(phi))
            }
            _ => (None, None),
        };
        let z2 = match z2 {
            Some(v) => v,
            None => c.c(Tensor::zeros([n, f])),
        };
        let z3 = match z3 {
            Some(v) => v,
            None => c.c(Tensor::zeros([n, f])),
        };
        let cat = c.tape.concat(&[z1, z2, z3], 1)?;
        let z_h = c.lin("enc.comb2", cat)?;
        let mut z_h = c.layer_norm("norm.enc", z_h)?;
        let mut z_e = z_e;
        let mut z_m = z_m;
        let mut vel = if mode.uses_3d() {
            Some(c.c(Tensor::zeros([n, 3, f])))
        } else {
            None
        };

        for l in 0..cfg.layers {
            let inv = match (z_e, z_m) {
                (Some(e), Some(m)) => {
                    let (h, e2, m2) = self.invariant_layer(c, l, z_h, e, m, phi2d.unwrap(), phi3d, n)?;
                    z_e = Some(e2);
                    z_m = Some(m2);
                    Some(h)
                }
                _ => None,
            };
            let eqv = match (&p.geometry, vel) {
                (Some(g), Some(v)) => {
                    let extra = if mode == Mode::Joint && cfg.bias2d_in_equivariant { phi2d } else { None };
                    let (h, v2) = self.equivariant_layer(c, l, z_h, v, g, phi3d.unwrap(), extra, n)?;
                    vel = Some(v2);
                    Some(h)
                }
                _ => None,
            };
            z_h = match (inv, eqv) {
                (Some(a), Some(b)) => {
                    let cat = c.tape.concat(&[a, b], 1)?;
                    c.lin(&format!("layer.{l}.comb3"), cat)?
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!("mode activates at least one channel"),
            };
            let hid = c.lin(&format!("layer.{l}.ffn1"), z_h)?;
            let hid = c.tape.silu(hid);
            let hid = c.drop(hid)?;
            let upd = c.lin(&format!("layer.{l}.ffn2"), hid)?;
            z_h = c.tape.add(z_h, upd)?;
            z_h = c.layer_norm(&format!("layer.{l}.norm"), z_h)?;
        }

        // output block
        let hh = c.lin("out.h1", z_h)?;
        let hh = c.tape.silu(hh);
        let h_out = c.lin("out.h2", hh)?;
        let (e_logits, e_prob) = match z_e {
            Some(e) => {
                let a = c.lin("out.e1", e)?;
                let a = c.tape.silu(a);
                let lo = c.lin("out.e2", a)?;
                let lo = c.symmetrize(lo)?;
                let pr = c.tape.softmax(lo, 2)?;
                (Some(lo), Some(pr))
            }
            None => (None, None),
        };
        let x_out = match (vel, &p.x) {
            (Some(v), Some(x)) => {
                let u = c.project("out.v1", v)?;
                let ut = c.tape.permute(u, &[0, 2, 1])?;
                let norm = c.tape.norm(ut)?;
                let gate = c.tape.sigmoid(norm);
                let gate = c.reshape(gate, &[n, 1, f])?;
                let g = c.tape.mul(u, gate)?;
                let disp = c.project("out.v2", g)?;
                let disp = c.reshape(disp, &[n, 3])?;
                let xv = c.c(x.clone());
                Some(c.tape.add(xv, disp)?)
            }
            _ => None,
        };
        Ok(RawOutput {
            h: h_out,
            e_logits,
            e_prob,
            x: x_out,
        })
    }

    fn encode_neighborhood_2d(&self, c: &mut Ctx, hin: Var, s: &Structure, n: usize) -> Result<Var, TensorError> {
        let f = self.config.atom_width;
        let own = c.lin("enc.atom3", hin)?;
        let hj = c.project("enc.nbr_atom", hin)?;
        let hj = c.reshape(hj, &[1, n, f])?;
        let e = c.c(s.onehot.clone());
        let ew = c.project("enc.nbr_edge", e)?;
        let msg = c.tape.mul(hj, ew)?;
        let w = c.c(s.neighbor_mean.clone());
        let msg = c.tape.mul(msg, w)?;
        let agg = c.tape.sum(msg, 1)?;
        c.tape.add(own, agg)
    }

    fn encode_neighborhood_3d(&self, c: &mut Ctx, hin: Var, g: &Geometry, n: usize) -> Result<Var, TensorError> {
        let f = self.config.atom_width;
        let r = c.c(g.rbf.clone());
        let e = c.lin("enc.edge3", r)?;
        let e = c.tape.silu(e);
        let cut = c.c(g.cutoff.clone());
        let e = c.tape.mul(e, cut)?;
        let hj = c.lin("enc.atom4", hin)?;
        let hj = c.reshape(hj, &[1, n, f])?;
        let msg = c.tape.mul(hj, e)?;
        let w = c.c(g.neighbor_mean.clone());
        let msg = c.tape.mul(msg, w)?;
        c.tape.sum(msg, 1)
    }

    fn encode_bonds(&self, c: &mut Ctx, hin: Var, s: &Structure, n: usize) -> Result<Var, TensorError> {
        let fe = self.config.edge_width;
        let a = c.project("bond.atom2", hin)?;
        let ai = c.reshape(a, &[n, 1, fe])?;
        let aj = c.reshape(a, &[1, n, fe])?;
        let e = c.c(s.onehot.clone());
        let ee = c.project("bond.edge1", e)?;
        let sum = c.tape.add(ai, ee)?;
        let sum = c.tape.add(sum, aj)?;
        let z = c.lin("bond.comb1", sum)?;
        c.symmetrize(z)
    }

    fn bias_2d(&self, c: &mut Ctx, s: &Structure, n: usize) -> Result<Var, TensorError> {
        let spd = c.c(s.spd_onehot.clone());
        let a = c.project("bias2d.spd", spd)?;
        let path = c.c(s.path_edges.clone());
        let b = c.project("bias2d.path", path)?;
        let sum = c.tape.add(a, b)?;
        c.reshape(sum, &[n, n, 1])
    }

    fn bias_3d(&self, c: &mut Ctx, g: &Geometry) -> Result<Var, TensorError> {
        let r = c.c(g.rbf.clone());
        let a = c.lin("bias3d.1", r)?;
        let a = c.tape.silu(a);
        c.lin("bias3d.2", a)
    }

    /// Splits `[n, f]` into heads: `[heads, n, dh]`.
    fn heads(&self, c: &mut Ctx, x: Var, n: usize) -> Result<Var, TensorError> {
        let (h, dh) = (self.config.heads, self.config.head_width());
        let x = c.reshape(x, &[n, h, dh])?;
        c.tape.permute(x, &[1, 0, 2])
    }

    #[allow(clippy::too_many_arguments)]
    fn invariant_layer(
        &self,
        c: &mut Ctx,
        l: usize,
        z_h: Var,
        z_e: Var,
        z_m: Var,
        phi2d: Var,
        phi3d: Option<Var>,
        n: usize,
    ) -> Result<(Var, Var, Var), TensorError> {
        let cfg = &self.config;
        let (f, fe, dh) = (cfg.atom_width, cfg.edge_width, cfg.head_width());
        let name = |s: &str| format!("inv.{l}.{s}");

        let q = c.lin(&name("q"), z_h)?;
        let q = self.heads(c, q, n)?;
        let k = c.lin(&name("k"), z_h)?;
        let k = self.heads(c, k, n)?;
        let kt = c.tape.permute(k, &[0, 2, 1])?;
        let logits = c.tape.matmul(q, kt)?;
        let logits = c.tape.permute(logits, &[1, 2, 0])?;
        let logits = c.tape.scale(logits, 1.0 / (dh as f64).sqrt());

        // pair modulation of the logits
        let e1 = c.lin(&name("e1"), z_e)?;
        let e1 = c.tape.add_scalar(e1, 1.0);
        let e2 = c.lin(&name("e2"), z_e)?;
        let a = c.tape.mul(logits, e1)?;
        let a = c.tape.add(a, e2)?;

        // graph-token modulation feeding the edge update
        let m1 = c.lin(&name("m1"), z_m)?;
        let m1 = c.tape.add_scalar(m1, 1.0);
        let m2 = c.lin(&name("m2"), z_m)?;
        let am = c.tape.mul(a, m1)?;
        let am = c.tape.add(am, m2)?;
        let e_hat = c.lin(&name("eout"), am)?;
        let z_e_new = c.tape.add(z_e, e_hat)?;
        let z_e_new = c.symmetrize(z_e_new)?;

        // graph token update
        let n2g = self.pool(c, z_h, &name("n2g"), f)?;
        let flat = c.reshape(z_e, &[n * n, fe])?;
        let e2g = self.pool(c, flat, &name("e2g"), fe)?;
        let m = c.tape.add(n2g, e2g)?;
        let m = c.tape.add(m, z_m)?;
        let z_m_new = c.lin(&name("mout"), m)?;

        // attention over j
        let mut s = c.tape.add(a, phi2d)?;
        if let Some(p3) = phi3d {
            s = c.tape.add(s, p3)?;
        }
        let attn = c.tape.softmax(s, 1)?;
        let attn = c.drop(attn)?;
        let attn = c.tape.permute(attn, &[2, 0, 1])?;
        let v = c.lin(&name("v"), z_h)?;
        let v = self.heads(c, v, n)?;
        let o = c.tape.matmul(attn, v)?;
        let o = c.tape.permute(o, &[1, 0, 2])?;
        let o = c.reshape(o, &[n, f])?;
        let o = c.lin(&name("hout"), o)?;
        let z_h_new = c.tape.add(z_h, o)?;
        Ok((z_h_new, z_e_new, z_m_new))
    }

    /// Mean, max and min over rows, concatenated and mapped affinely: `[1, f]`.
    fn pool(&self, c: &mut Ctx, x: Var, name: &str, width: usize) -> Result<Var, TensorError> {
        let mean = c.tape.mean(x, 0)?;
        let max = c.tape.max(x, 0)?;
        let min = c.tape.min(x, 0)?;
        let cat = c.tape.concat(&[mean, max, min], 0)?;
        let cat = c.reshape(cat, &[1, 3 * width])?;
        c.lin(name, cat)
    }

    #[allow(clippy::too_many_arguments)]
    fn equivariant_layer(
        &self,
        c: &mut Ctx,
        l: usize,
        z_h: Var,
        vel: Var,
        g: &Geometry,
        phi3d: Var,
        phi2d: Option<Var>,
        n: usize,
    ) -> Result<(Var, Var), TensorError> {
        let cfg = &self.config;
        let (f, heads, dh) = (cfg.atom_width, cfg.heads, cfg.head_width());
        let name = |s: &str| format!("eqv.{l}.{s}");

        let q = c.lin(&name("q"), z_h)?;
        let q = c.reshape(q, &[n, 1, f])?;
        let k = c.lin(&name("k"), z_h)?;
        let k = c.reshape(k, &[1, n, f])?;
        let vs = c.lin(&name("v"), z_h)?;
        let vs = c.reshape(vs, &[1, n, 3 * f])?;
        let r = c.c(g.rbf.clone());
        let dk = c.lin(&name("dk"), r)?;
        let dk = c.tape.silu(dk);
        let dv = c.lin(&name("dv"), r)?;
        let dv = c.tape.silu(dv);

        let qk = c.tape.mul(q, k)?;
        let qk = c.tape.mul(qk, dk)?;
        let qk = c.reshape(qk, &[n, n, heads, dh])?;
        let logits = c.tape.sum(qk, 3)?;
        let logits = c.tape.scale(logits, 1.0 / (dh as f64).sqrt());
        let mut s = c.tape.add(logits, phi3d)?;
        if let Some(p2) = phi2d {
            s = c.tape.add(s, p2)?;
        }
        let attn = c.tape.softmax(s, 1)?;
        let cut = c.c(g.cutoff.clone());
        let attn = c.tape.mul(attn, cut)?;
        let attn = c.drop(attn)?;

        let zv = c.tape.mul(vs, dv)?;
        let parts = c.tape.split(zv, 3, 2)?;
        let (zv1, zv2, zv3) = (parts[0], parts[1], parts[2]);

        let zv1 = c.reshape(zv1, &[n, n, heads, dh])?;
        let a4 = c.reshape(attn, &[n, n, heads, 1])?;
        let weighted = c.tape.mul(zv1, a4)?;
        let agg = c.tape.sum(weighted, 1)?;
        let agg = c.reshape(agg, &[n, f])?;
        let zo = c.lin(&name("o"), agg)?;
        let zo = c.tape.split(zo, 3, 1)?;

        let vv = c.project(&name("vec"), vel)?;
        let vv = c.tape.split(vv, 3, 2)?;
        let ip = c.tape.mul(vv[0], vv[1])?;
        let ip = c.tape.sum(ip, 1)?;
        let gated = c.tape.mul(zo[1], ip)?;
        let z_h_new = c.tape.add(z_h, zo[0])?;
        let z_h_new = c.tape.add(z_h_new, gated)?;

        // vector messages: neighbor velocities and unit directions
        let zv2 = c.reshape(zv2, &[n, n, 1, f])?;
        let vj = c.reshape(vel, &[1, n, 3, f])?;
        let from_v = c.tape.mul(zv2, vj)?;
        let zv3 = c.reshape(zv3, &[n, n, 1, f])?;
        let dirs = c.c(g.directions.clone());
        let from_d = c.tape.mul(zv3, dirs)?;
        let msg = c.tape.add(from_v, from_d)?;
        let cut4 = c.reshape(cut, &[n, n, 1, 1])?;
        let msg = c.tape.mul(msg, cut4)?;
        let w = c.tape.sum(msg, 1)?;
        let o3 = c.reshape(zo[2], &[n, 1, f])?;
        let scaled = c.tape.mul(o3, vv[2])?;
        let v_new = c.tape.add(vel, w)?;
        let v_new = c.tape.add(v_new, scaled)?;
        Ok((z_h_new, v_new))
    }

    /// The graph-token encoding on its own, checking the descriptor width.
    pub fn encode_graph(&self, features: &[f64]) -> Result<Tensor, ModelError> {
        if features.len() != GRAPH_FEATURE_WIDTH {
            return Err(ModelError::Input(format!(
                "graph encoding expects {GRAPH_FEATURE_WIDTH} features, got {}",
                features.len()
            )));
        }
        let mut tape = Tape::new();
        let mut bind = Binding::new(&self.params);
        let x = tape.constant(Tensor::new([1, GRAPH_FEATURE_WIDTH], features.to_vec())?);
        let y = bind.linear(&mut tape, "graph", x)?;
        Ok(tape.value(y).clone())
    }

    /// Atom encoding `[n, f]` from input features and degrees.
    pub fn encode_atoms(&self, input: &ModelInput, mode: Mode) -> Result<Tensor, ModelError> {
        let prep = self.prepare(input, mode)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            bind: Binding::new(&self.params),
            dropout: None,
        };
        let hin = ctx.c(prep.hin.clone());
        let mut z1 = ctx.lin("enc.atom1", hin)?;
        if let Some(s) = prep.structure.as_ref().filter(|_| mode.uses_2d()) {
            let deg = ctx.c(s.degree.clone());
            let din = ctx.project("enc.in_deg", deg)?;
            let dout = ctx.project("enc.out_deg", deg)?;
            z1 = ctx.tape.add(z1, din)?;
            z1 = ctx.tape.add(z1, dout)?;
        }
        Ok(ctx.tape.value(z1).clone())
    }

    /// `(phi2d, phi3d)` as `[n, n]` tensors, each present when its modality is.
    pub fn biases(&self, input: &ModelInput, mode: Mode) -> Result<(Option<Tensor>, Option<Tensor>), ModelError> {
        let prep = self.prepare(input, mode)?;
        let n = prep.n;
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            bind: Binding::new(&self.params),
            dropout: None,
        };
        let p2 = match &prep.structure {
            Some(s) => {
                let v = self.bias_2d(&mut ctx, s, n)?;
                Some(ctx.tape.value(v).clone().reshape([n, n])?)
            }
            None => None,
        };
        let p3 = match &prep.geometry {
            Some(g) => {
                let v = self.bias_3d(&mut ctx, g)?;
                Some(ctx.tape.value(v).clone().reshape([n, n])?)
            }
            None => None,
        };
        Ok((p2, p3))
    }

    /// Bond encoding `[n, n, fe]`.
    pub fn encode_bond_pairs(&self, input: &ModelInput) -> Result<Tensor, ModelError> {
        let prep = self.prepare(input, Mode::TwoD)?;
        let mut tape = Tape::new();
        let mut ctx = Ctx {
            tape: &mut tape,
            bind: Binding::new(&self.params),
            dropout: None,
        };
        let hin = ctx.c(prep.hin.clone());
        let s = prep.structure.as_ref().expect("2d structure");
        let v = self.encode_bonds(&mut ctx, hin, s, prep.n)?;
        Ok(ctx.tape.value(v).clone())
    }
}

fn build_params(cfg: &ModelConfig, rng: &mut Rng) -> ParamStore {
    use Group::{Shared, ThreeD, TwoD};
    let (f, fe, k, b) = (cfg.atom_width, cfg.edge_width, cfg.rbf_count, cfg.bond_categories);
    let din = cfg.feature_width() + 1;
    let heads = cfg.heads;
    let mut p = ParamStore::new();
    p.add_linear(rng, "enc.atom1", Shared, din, f);
    p.add_matrix(rng, "enc.in_deg", TwoD, 1, f);
    p.add_matrix(rng, "enc.out_deg", TwoD, 1, f);
    p.add_linear(rng, "enc.atom3", TwoD, din, f);
    p.add_matrix(rng, "enc.nbr_atom", TwoD, din, f);
    p.add_matrix(rng, "enc.nbr_edge", TwoD, b, f);
    p.add_linear(rng, "enc.edge3", ThreeD, k, f);
    p.add_linear(rng, "enc.atom4", ThreeD, din, f);
    p.add_linear(rng, "enc.comb2", Shared, 3 * f, f);
    p.add_norm("norm.enc", Shared, f);
    p.add_matrix(rng, "bond.atom2", TwoD, din, fe);
    p.add_matrix(rng, "bond.edge1", TwoD, b, fe);
    p.add_linear(rng, "bond.comb1", TwoD, fe, fe);
    p.add_linear(rng, "graph", TwoD, GRAPH_FEATURE_WIDTH, f);
    p.add_matrix(rng, "bias2d.spd", TwoD, cfg.max_spd + 2, 1);
    p.add_matrix(rng, "bias2d.path", TwoD, cfg.max_path * b, 1);
    p.add_linear(rng, "bias3d.1", ThreeD, k, f);
    p.add_linear(rng, "bias3d.2", ThreeD, f, 1);
    for l in 0..cfg.layers {
        for s in ["q", "k", "v", "hout"] {
            p.add_linear(rng, &format!("inv.{l}.{s}"), TwoD, f, f);
        }
        p.add_linear(rng, &format!("inv.{l}.e1"), TwoD, fe, heads);
        p.add_linear(rng, &format!("inv.{l}.e2"), TwoD, fe, heads);
        p.add_linear(rng, &format!("inv.{l}.m1"), TwoD, f, heads);
        p.add_linear(rng, &format!("inv.{l}.m2"), TwoD, f, heads);
        p.add_linear(rng, &format!("inv.{l}.eout"), TwoD, heads, fe);
        p.add_linear(rng, &format!("inv.{l}.n2g"), TwoD, 3 * f, f);
        p.add_linear(rng, &format!("inv.{l}.e2g"), TwoD, 3 * fe, f);
        p.add_linear(rng, &format!("inv.{l}.mout"), TwoD, f, f);

        p.add_linear(rng, &format!("eqv.{l}.q"), ThreeD, f, f);
        p.add_linear(rng, &format!("eqv.{l}.k"), ThreeD, f, f);
        p.add_linear(rng, &format!("eqv.{l}.v"), ThreeD, f, 3 * f);
        p.add_linear(rng, &format!("eqv.{l}.dk"), ThreeD, k, f);
        p.add_linear(rng, &format!("eqv.{l}.dv"), ThreeD, k, 3 * f);
        p.add_linear(rng, &format!("eqv.{l}.o"), ThreeD, f, 3 * f);
        p.add_matrix(rng, &format!("eqv.{l}.vec"), ThreeD, f, 3 * f);

        p.add_linear(rng, &format!("layer.{l}.comb3"), ThreeD, 2 * f, f);
        p.add_linear(rng, &format!("layer.{l}.ffn1"), Shared, f, cfg.ffn_width);
        p.add_linear(rng, &format!("layer.{l}.ffn2"), Shared, cfg.ffn_width, f);
        p.add_norm(&format!("layer.{l}.norm"), Shared, f);
    }
    p.add_linear(rng, "out.h1", Shared, f, f);
    p.add_linear(rng, "out.h2", Shared, f, cfg.feature_width());
    p.add_linear(rng, "out.e1", TwoD, fe, fe);
    p.add_linear(rng, "out.e2", TwoD, fe, b);
    p.add_matrix(rng, "out.v1", ThreeD, f, f);
    p.add_matrix(rng, "out.v2", ThreeD, f, 1);
    p
}
