use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::DcnConfig;
use super::layers::{Linear, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Segment lengths of the concatenated DCN input, in concatenation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct X0Layout {
    pub continuous: usize,
    pub matching: usize,
    pub interaction: usize,
    pub embeddings: Vec<usize>,
}

impl X0Layout {
    pub fn len(&self) -> usize {
        self.continuous + self.matching + self.interaction + self.embeddings.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[continuous, matching, interaction, embedding_1, …, embedding_n]`
    pub fn assemble(
        &self,
        continuous: &[f64],
        matching: &[f64],
        interaction: &[f64],
        embeddings: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::dim("assemble_x0", format!("{what} has length {got}, schema expects {want}")))
            }
        };
        check("continuous segment", continuous.len(), self.continuous)?;
        check("matching segment", matching.len(), self.matching)?;
        check("interaction segment", interaction.len(), self.interaction)?;
        check("embedding count", embeddings.len(), self.embeddings.len())?;
        for (i, (e, &want)) in embeddings.iter().zip(&self.embeddings).enumerate() {
            check(&format!("embedding {i}"), e.len(), want)?;
        }
        let mut x0 = Vec::with_capacity(self.len());
        x0.extend_from_slice(continuous);
        x0.extend_from_slice(matching);
        x0.extend_from_slice(interaction);
        for e in embeddings {
            x0.extend_from_slice(e);
        }
        Ok(x0)
    }
}

/// `h0 ⊙ (W·h + b) + h` on plain vectors; `W` is `len × len`.
pub fn cross_layer(h0: &[f64], h: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    let n = h.len();
    if h0.len() != n || w.shape() != [n, n] || b.len() != n {
        return Err(Error::dim(
            "cross_layer",
            format!("h0 {}, h {n}, W {:?}, b {}", h0.len(), w.shape(), b.len()),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let wh: f64 = w.row(i).iter().zip(h).map(|(a, b)| a * b).sum();
            h0[i] * (wh + b[i]) + h[i]
        })
        .collect())
}

/// Parallel cross and deep branches over the same `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcnBottom {
    pub cross: Vec<Linear>,
    pub deep: Mlp,
    pub in_dim: usize,
}

impl DcnBottom {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        config: &DcnConfig,
    ) -> Result<Self> {
        if config.cross_layers == 0 || config.deep_widths.is_empty() {
            return Err(Error::Config("DCN needs at least one cross and one deep layer".into()));
        }
        let cross = (0..config.cross_layers)
            .map(|i| Linear::new(store, rng, &format!("{name}.cross.{i}"), in_dim, in_dim, true))
            .collect::<Result<Vec<_>>>()?;
        let deep = Mlp::new(store, rng, &format!("{name}.deep"), in_dim, &config.deep_widths, true)?;
        Ok(Self { cross, deep, in_dim })
    }

    pub fn out_dim(&self) -> usize {
        self.in_dim + self.deep.out_dim()
    }

    pub fn cross_forward(&self, g: &Graph, store: &ParamStore, x0: Var) -> Result<Var> {
        let mut h = x0;
        for layer in &self.cross {
            let wh = layer.forward(g, store, h)?;
            h = g.add(g.mul(x0, wh)?, h)?;
        }
        Ok(h)
    }

    /// `x_final = [cross_out, deep_out]`
    pub fn forward(&self, g: &Graph, store: &ParamStore, x0: Var) -> Result<Var> {
        if g.cols(x0) != self.in_dim {
            return Err(Error::dim(
                "dcn_forward",
                format!("x0 has {} columns, bottom expects {}", g.cols(x0), self.in_dim),
            ));
        }
        let cross = self.cross_forward(g, store, x0)?;
        let deep = self.deep.forward(g, store, x0)?;
        g.concat_cols(&[cross, deep])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.cross.iter().flat_map(Linear::params).collect();
        p.extend(self.deep.params());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_params, jitter};
    use crate::numerics::normal_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn x0_lengths_and_order() {
        let layout = X0Layout {
            continuous: 3,
            matching: 8,
            interaction: 3,
            embeddings: vec![4, 4],
        };
        assert_eq!(layout.len(), 22);
        let x0 = layout
            .assemble(&[1.0; 3], &[2.0; 8], &[3.0; 3], &[vec![4.0; 4], vec![5.0; 4]])
            .unwrap();
        assert_eq!(x0.len(), 22);
        assert_eq!(x0[2], 1.0);
        assert_eq!(x0[3], 2.0);
        assert_eq!(x0[11], 3.0);
        assert_eq!(x0[14], 4.0);
        assert_eq!(x0[21], 5.0);
        let no_cont = X0Layout {
            continuous: 0,
            ..layout.clone()
        };
        let x0 = no_cont
            .assemble(&[], &[2.0; 8], &[3.0; 3], &[vec![4.0; 4], vec![5.0; 4]])
            .unwrap();
        assert_eq!(x0.len(), 19);
        assert_eq!(x0[0], 2.0);
        assert!(layout.assemble(&[1.0; 2], &[2.0; 8], &[3.0; 3], &[vec![4.0; 4], vec![5.0; 4]]).is_err());
    }

    #[test]
    fn cross_layer_examples() {
        let h = [2.0, 3.0];
        assert_eq!(cross_layer(&[1.0, 1.0], &h, &Tensor::zeros(&[2, 2]), &[0.0, 0.0]).unwrap(), h);
        assert_eq!(cross_layer(&[1.0, 1.0], &h, &Tensor::identity(2), &[0.0, 0.0]).unwrap(), vec![4.0, 6.0]);
        assert!(cross_layer(&[1.0], &h, &Tensor::identity(2), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn graph_cross_matches_plain_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cfg = DcnConfig {
            cross_layers: 1,
            deep_widths: vec![4],
        };
        let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 6, &cfg).unwrap();
        let x = normal_init(&mut rng, &[1, 6], 1.0);
        let g = Graph::inference();
        let out = g.value(dcn.cross_forward(&g, &store, g.constant(x.clone())).unwrap());
        let w = store.get(dcn.cross[0].weight);
        let b = store.get(dcn.cross[0].bias.unwrap()).data().to_vec();
        let expect = cross_layer(x.data(), x.data(), w, &b).unwrap();
        for (a, e) in out.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_identity_cross_and_zero_deep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let cfg = DcnConfig {
            cross_layers: 3,
            deep_widths: vec![5],
        };
        let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 6, &cfg).unwrap();
        zero_all(&mut store, &dcn.params());
        let x = normal_init(&mut rng, &[4, 6], 1.0);
        let g = Graph::inference();
        let out = g.value(dcn.forward(&g, &store, g.constant(x.clone())).unwrap());
        assert_eq!(out.shape(), &[4, 11]);
        for r in 0..4 {
            assert_eq!(&out.row(r)[..6], x.row(r));
            assert!(out.row(r)[6..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn final_width_is_input_plus_last_deep() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 22, &DcnConfig::default()).unwrap();
        assert_eq!(dcn.out_dim(), 86);
    }

    #[test]
    fn cross_layer_gradcheck_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let cfg = DcnConfig {
                cross_layers: 1,
                deep_widths: vec![3],
            };
            let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 6, &cfg).unwrap();
            let x = store.add("x", normal_init(&mut rng, &[3, 6], 1.0)).unwrap();
            let rep = check_params(&mut store, 64, |g, st| {
                let h = dcn.cross_forward(g, st, g.param(st, x))?;
                g.mean(g.sigmoid(h)?)
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn deep_layer_gradcheck_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let deep = Mlp::new(&mut store, &mut rng, "deep", 5, &[6, 4], true).unwrap();
            let x = store.add("x", normal_init(&mut rng, &[3, 5], 1.0)).unwrap();
            jitter(&mut store, &mut rng, 0.1);
            let rep = check_params(&mut store, 64, |g, st| {
                let h = deep.forward(g, st, g.param(st, x))?;
                g.mean(g.sigmoid(h)?)
            })
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn full_dcn_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let cfg = DcnConfig {
            cross_layers: 2,
            deep_widths: vec![6, 4],
        };
        let dcn = DcnBottom::new(&mut store, &mut rng, "dcn", 5, &cfg).unwrap();
        let x = store.add("x", normal_init(&mut rng, &[4, 5], 1.0)).unwrap();
        jitter(&mut store, &mut rng, 0.1);
        let rep = check_params(&mut store, 64, |g, st| {
            let h = dcn.forward(g, st, g.param(st, x))?;
            g.mean(g.sigmoid(h)?)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
