//! Object layout and class prototypes.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rng::{self, Tag};
use crate::embedding::{cosine_similarity, Embedding};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// World position, meters (z is depth).
    pub position: [f64; 3],
    pub class: u32,
}

impl ObjectSpec {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub objects: Vec<ObjectSpec>,
    pub embedding_dim: usize,
    /// Largest cosine similarity allowed between prototypes of different classes.
    pub max_prototype_similarity: f64,
    /// Class pairs whose prototypes are deliberately similar.
    pub confusable_pairs: Vec<[u32; 2]>,
    pub confusable_similarity: f64,
    /// Opposite corners of the box every object must lie in.
    pub bounds: [[f64; 3]; 2],
}

impl Default for WorldSpec {
    /// Twelve objects in six classes scattered just outside the default survey loop.
    fn default() -> Self {
        let layout = [
            ([3.0, -2.0, 1.2], 0),
            ([6.0, -1.5, 1.0], 1),
            ([10.0, -1.0, 1.3], 2),
            ([10.5, 2.5, 1.1], 3),
            ([9.5, 6.0, 1.4], 4),
            ([5.0, 7.0, 1.0], 5),
            ([2.0, 6.5, 1.2], 0),
            ([-2.0, 6.0, 1.3], 1),
            ([-2.0, 3.0, 1.1], 2),
            ([-1.5, 0.5, 1.0], 3),
            ([-1.0, -2.0, 1.4], 4),
            ([1.0, -2.5, 1.2], 5),
        ];
        Self {
            objects: layout
                .iter()
                .map(|&(position, class)| ObjectSpec { position, class })
                .collect(),
            embedding_dim: crate::embedding::DEFAULT_DIM,
            max_prototype_similarity: 0.5,
            confusable_pairs: Vec::new(),
            confusable_similarity: 0.9,
            bounds: [[-20.0, -20.0, 0.0], [30.0, 30.0, 20.0]],
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::config("sim.world.embedding_dim must be at least 2"));
        }
        if !(-1.0..=1.0).contains(&self.max_prototype_similarity) {
            return Err(Error::config("sim.world.max_prototype_similarity must lie in [-1, 1]"));
        }
        if !(self.confusable_similarity > -1.0 && self.confusable_similarity < 1.0) {
            return Err(Error::config("sim.world.confusable_similarity must lie in (-1, 1)"));
        }
        let [lo, hi] = self.bounds;
        for (i, o) in self.objects.iter().enumerate() {
            let inside = (0..3).all(|k| o.position[k].is_finite() && o.position[k] >= lo[k] && o.position[k] <= hi[k]);
            if !inside {
                return Err(Error::config(format!("sim.world.objects[{i}] lies outside sim.world.bounds")));
            }
        }
        for (i, [a, b]) in self.confusable_pairs.iter().enumerate() {
            if a == b {
                return Err(Error::config(format!("sim.world.confusable_pairs[{i}] pairs a class with itself")));
            }
        }
        Ok(())
    }

    fn partner(&self, class: u32) -> Option<u32> {
        self.confusable_pairs.iter().find_map(|&[a, b]| match class {
            c if c == a => Some(b),
            c if c == b => Some(a),
            _ => None,
        })
    }

    /// Unit prototype embedding per class, deterministic in `seed`.
    ///
    /// The second class of a confusable pair is placed at exactly
    /// `confusable_similarity` from the first; every other pair is drawn at
    /// random and redrawn until its similarity is at most the configured bound.
    pub fn class_prototypes(&self, seed: u64) -> Result<BTreeMap<u32, Embedding>> {
        const MAX_ATTEMPTS: u64 = 1000;
        let dim = self.embedding_dim;
        let mut classes: Vec<u32> = self.objects.iter().map(|o| o.class).collect();
        for [a, b] in &self.confusable_pairs {
            classes.extend([*a, *b]);
        }
        classes.sort_unstable();
        classes.dedup();
        let mut out: BTreeMap<u32, Embedding> = BTreeMap::new();
        for &c in &classes {
            let partner = self.partner(c).filter(|p| out.contains_key(p));
            let mut accepted = None;
            for attempt in 0..MAX_ATTEMPTS {
                let mut r = rng::stream(seed, Tag::Prototype, c as u64, attempt);
                let mut v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut r, 1.0)).collect();
                if let Some(p) = partner {
                    // Gram-Schmidt against the partner, then mix at the target angle.
                    let a = out[&p].values();
                    let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let s = self.confusable_similarity;
                    let c2 = (1.0 - s * s).sqrt();
                    v = a.iter().zip(&v).map(|(y, x)| s * y + c2 * x / n).collect();
                }
                let e = match Embedding::new(v) {
                    Ok(e) => e.normalized(),
                    Err(_) => continue,
                };
                let ok = out.iter().filter(|(k, _)| Some(**k) != partner).all(|(_, q)| {
                    cosine_similarity(&e, q).is_ok_and(|s| s <= self.max_prototype_similarity)
                });
                if ok {
                    accepted = Some(e);
                    break;
                }
            }
            let e = accepted.ok_or_else(|| {
                Error::config(format!(
                    "sim.world.max_prototype_similarity: no prototype for class {c} after {MAX_ATTEMPTS} draws"
                ))
            })?;
            out.insert(c, e);
        }
        Ok(out)
    }
}
