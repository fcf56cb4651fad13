use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::ClusterMembership;
use crate::embed::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::{axpy, Scalar};

/// Half-width of the uniform initialization of free kernels.
pub const FREE_INIT_RANGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelParams<T> {
    /// `v = sum_l z_l p_l` over the member k-grams of one cluster.
    Constrained {
        members: Vec<Vec<String>>,
        z: Vec<T>,
        /// Row-major `|members| x (d k)` matrix of member representations
        /// `p_l`; empty until bound to an embedding table.
        basis: Vec<T>,
    },
    Free { v: Vec<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T> {
    pub width: usize,
    pub params: KernelParams<T>,
    pub frozen: bool,
}

impl<T: Scalar> Kernel<T> {
    pub fn is_constrained(&self) -> bool {
        matches!(self.params, KernelParams::Constrained { .. })
    }

    /// The learnable tensor: `z` for constrained kernels, `v` for free ones.
    pub fn values(&self) -> &[T] {
        match &self.params {
            KernelParams::Constrained { z, .. } => z,
            KernelParams::Free { v } => v,
        }
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        match &mut self.params {
            KernelParams::Constrained { z, .. } => z,
            KernelParams::Free { v } => v,
        }
    }

    /// Kernel vector of length `d * width`.
    pub fn compose(&self, d: usize) -> Result<Vec<T>> {
        match &self.params {
            KernelParams::Free { v } => Ok(v.clone()),
            KernelParams::Constrained { z, basis, .. } => {
                let dk = d * self.width;
                if basis.len() != z.len() * dk {
                    return Err(Error::Validation(
                        "constrained kernel is not bound to word embeddings".into(),
                    ));
                }
                compose_flat(z, basis, dk)
            }
        }
    }
}

fn compose_flat<T: Scalar>(z: &[T], basis: &[T], dk: usize) -> Result<Vec<T>> {
    let mut v = vec![T::zero(); dk];
    for (&zl, p) in z.iter().zip(basis.chunks_exact(dk)) {
        axpy(zl, p, &mut v);
    }
    Ok(v)
}

/// `v = sum_l z_l p_l`.
pub fn compose_kernel<T: Scalar>(z: &[T], members: &[Vec<T>]) -> Result<Vec<T>> {
    if z.len() != members.len() {
        return Err(Error::Mismatch(format!(
            "{} weights for {} member k-grams",
            z.len(),
            members.len()
        )));
    }
    let Some(first) = members.first() else {
        return Ok(Vec::new());
    };
    let mut v = vec![T::zero(); first.len()];
    for (&zl, p) in z.iter().zip(members) {
        if p.len() != v.len() {
            return Err(Error::Mismatch("member representations differ in length".into()));
        }
        axpy(zl, p, &mut v);
    }
    Ok(v)
}

/// All kernels of a model, ordered by width and, within a width, constrained
/// kernels before free ones.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank<T> {
    pub d: usize,
    pub kernels: Vec<Kernel<T>>,
}

impl<T: Scalar> KernelBank<T> {
    pub fn empty(d: usize) -> Self {
        KernelBank {
            d,
            kernels: Vec::new(),
        }
    }

    /// One constrained kernel per cluster with `z = 1 / |C_j|`.
    pub fn from_membership(
        membership: &ClusterMembership,
        table: &WordEmbeddingTable<T>,
        frozen: bool,
    ) -> Result<Self> {
        let d = table.dim();
        let mut kernels = Vec::new();
        for (&width, clusters) in membership {
            for members in clusters {
                if members.is_empty() {
                    return Err(Error::Validation(format!("empty cluster of width {width}")));
                }
                let init = T::one() / T::of(members.len() as f64);
                kernels.push(Kernel {
                    width,
                    params: KernelParams::Constrained {
                        members: members.clone(),
                        z: vec![init; members.len()],
                        basis: Vec::new(),
                    },
                    frozen,
                });
            }
        }
        let mut bank = KernelBank { d, kernels };
        bank.bind(table)?;
        Ok(bank)
    }

    /// `per_width` free kernels of each width drawn uniformly from
    /// `[-0.01, 0.01]`.
    pub fn free_random(d: usize, widths: &[usize], per_width: usize, seed: u64) -> Self {
        let mut bank = KernelBank::empty(d);
        bank.add_free(widths, per_width, seed);
        bank
    }

    /// Appends `per_width` fresh free kernels to every width, keeping the
    /// bank ordered.
    pub fn add_free(&mut self, widths: &[usize], per_width: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = FREE_INIT_RANGE;
        for &width in widths {
            let at = self
                .kernels
                .iter()
                .rposition(|k| k.width <= width)
                .map_or(0, |p| p + 1);
            let fresh: Vec<Kernel<T>> = (0..per_width)
                .map(|_| Kernel {
                    width,
                    params: KernelParams::Free {
                        v: (0..self.d * width)
                            .map(|_| T::of(rng.random_range(-r..=r)))
                            .collect(),
                    },
                    frozen: false,
                })
                .collect();
            self.kernels.splice(at..at, fresh);
        }
    }

    /// Fills the `p_l` basis of every constrained kernel from `table`.
    pub fn bind(&mut self, table: &WordEmbeddingTable<T>) -> Result<()> {
        if table.dim() != self.d {
            return Err(Error::Mismatch(format!(
                "kernels use dimension {} but the embedding table has {}",
                self.d,
                table.dim()
            )));
        }
        let d = self.d;
        for k in &mut self.kernels {
            if let KernelParams::Constrained { members, basis, .. } = &mut k.params {
                basis.clear();
                basis.resize(members.len() * d * k.width, T::zero());
                for (words, row) in members.iter().zip(basis.chunks_exact_mut(d * k.width)) {
                    if words.len() != k.width {
                        return Err(Error::Validation(format!(
                            "member {:?} does not have width {}",
                            words, k.width
                        )));
                    }
                    for (w, slot) in words.iter().zip(row.chunks_exact_mut(d)) {
                        table.write_vector(w, slot);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.kernels.iter().map(|k| k.width).collect();
        w.dedup();
        w
    }

    pub fn max_width(&self) -> usize {
        self.kernels.iter().map(|k| k.width).max().unwrap_or(0)
    }

    pub fn count_per_width(&self, width: usize) -> usize {
        self.kernels.iter().filter(|k| k.width == width).count()
    }

    pub fn free_count_per_width(&self, width: usize) -> usize {
        self.kernels
            .iter()
            .filter(|k| k.width == width && !k.is_constrained())
            .count()
    }

    pub fn compose_all(&self) -> Result<Vec<Vec<T>>> {
        self.kernels.iter().map(|k| k.compose(self.d)).collect()
    }

    pub fn freeze_all(&mut self) {
        self.kernels.iter_mut().for_each(|k| k.frozen = true);
    }
}

/// Flexible filters per width for a bank of `m` kernels over `n_widths`
/// widths: `round(fraction * m / n_widths)`, at least one when the fraction
/// is positive.
pub fn flexible_per_width(m: usize, n_widths: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || n_widths == 0 {
        return 0;
    }
    ((fraction * m as f64 / n_widths as f64).round() as usize).max(1)
}
