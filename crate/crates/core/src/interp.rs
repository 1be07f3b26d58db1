//! Recursive material interpolation over a rooted tree of polytopes.
//!
//! Nodes are addressed with Neveu labels: the root is the empty list and the
//! `n`-th child of `l` is `[l, n]`. Internal nodes carry a polytope whose
//! vertex `i` is associated with child `[l, i]`; leaves carry material laws.
//! Interpolated properties are sums over children weighted by barycentric
//! coordinates, applied recursively from the root.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::materials::{MaterialCatalogue, MaterialKind, MaterialModel};
use crate::polytope::{BarycentricResult, Polytope, PolytopeError, PolytopeSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("node {0} has no parent in the tree")]
    OrphanNode(NeveuLabel),
    #[error("node {label}: polytope has {expected} vertices but {found} children are declared")]
    ChildCountMismatch {
        label: NeveuLabel,
        expected: usize,
        found: usize,
    },
    #[error("material {0} appears on more than one leaf")]
    DuplicateMaterialLeaf(String),
    #[error("unknown label {0}")]
    UnknownLabel(NeveuLabel),
    #[error("label {0} is declared twice")]
    DuplicateLabel(NeveuLabel),
    #[error("the tree has no root")]
    MissingRoot,
    #[error("label {0} contains a zero index")]
    InvalidLabel(NeveuLabel),
    #[error("leaf {0} has children")]
    LeafWithChildren(NeveuLabel),
    #[error("unknown material {0}")]
    UnknownMaterial(String),
    #[error("design point has {got} coordinates, the tree expects {expected}")]
    DesignLengthMismatch { expected: usize, got: usize },
    #[error("node {label}: {source}")]
    Geometry {
        label: NeveuLabel,
        #[source]
        source: PolytopeError,
    },
}

/// Node address as a list of positive child indices; empty for the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NeveuLabel(pub Vec<usize>);

impl NeveuLabel {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// The label `[self, n]`.
    pub fn child(&self, n: usize) -> Self {
        let mut v = self.0.clone();
        v.push(n);
        Self(v)
    }

    /// The label `[self, other]`.
    pub fn concat(&self, other: &NeveuLabel) -> Self {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Self(v)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn last_index(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// ASCII identifier usable in file formats: `root` or `1_3_2`.
    pub fn slug(&self) -> String {
        if self.0.is_empty() {
            "root".into()
        } else {
            self.0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("_")
        }
    }
}

impl fmt::Display for NeveuLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("[]")
        } else {
            let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
            write!(f, "[{}]", parts.join(","))
        }
    }
}

impl From<&[usize]> for NeveuLabel {
    fn from(v: &[usize]) -> Self {
        Self(v.to_vec())
    }
}

/// Anything that can be combined linearly by the interpolation.
pub trait Interpolant: Clone + Send + Sync {
    fn zero() -> Self;
    /// `self += w * other`
    fn add_scaled(&mut self, w: f64, other: &Self);
}

impl Interpolant for f64 {
    fn zero() -> Self {
        0.0
    }

    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
}

/// Interpolated material property at one point: polarization (T), current
/// density (A/m^2) and the polarization derivative with respect to `B`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyValue {
    pub polarization: [f64; 2],
    pub current_density: f64,
    pub d_polarization: [[f64; 2]; 2],
}

impl Interpolant for PropertyValue {
    fn zero() -> Self {
        Self::default()
    }

    fn add_scaled(&mut self, w: f64, o: &Self) {
        self.polarization[0] += w * o.polarization[0];
        self.polarization[1] += w * o.polarization[1];
        self.current_density += w * o.current_density;
        for i in 0..2 {
            for j in 0..2 {
                self.d_polarization[i][j] += w * o.d_polarization[i][j];
            }
        }
    }
}

/// Either an interpolation subdomain or a material leaf.
#[derive(Debug, Clone)]
pub enum NodeSpec<L> {
    Internal(Polytope),
    Leaf(L),
}

#[derive(Debug, Clone)]
enum NodeKind<L> {
    Internal {
        polytope: Polytope,
        slot: usize,
    },
    Leaf(L),
}

#[derive(Debug, Clone)]
struct TreeNode<L> {
    label: NeveuLabel,
    kind: NodeKind<L>,
    children: Vec<usize>,
}

/// Validated interpolation tree. Nodes are stored in depth-first pre-order
/// with the root first; internal nodes are numbered by "slot" in the same
/// order, which also fixes the layout of design points.
#[derive(Debug, Clone)]
pub struct InterpTree<L> {
    nodes: Vec<TreeNode<L>>,
    internal: Vec<usize>,
    offsets: Vec<usize>,
    design_len: usize,
}

/// Per-node design coordinates, concatenated in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(pub Vec<f64>);

impl DesignPoint {
    /// Builds a design point from per-label coordinates.
    pub fn from_map<L>(
        tree: &InterpTree<L>,
        coords: &BTreeMap<NeveuLabel, Vec<f64>>,
    ) -> Result<Self, TreeError> {
        for label in coords.keys() {
            match tree.find(label) {
                Some(i) if matches!(tree.nodes[i].kind, NodeKind::Internal { .. }) => {}
                _ => return Err(TreeError::UnknownLabel(label.clone())),
            }
        }
        let mut out = vec![0.0; tree.design_len];
        for (slot, &node) in tree.internal.iter().enumerate() {
            let label = &tree.nodes[node].label;
            let p = coords
                .get(label)
                .ok_or_else(|| TreeError::UnknownLabel(label.clone()))?;
            let dim = tree.slot_dim(slot);
            if p.len() != dim {
                return Err(TreeError::DesignLengthMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            out[tree.offsets[slot]..tree.offsets[slot] + dim].copy_from_slice(p);
        }
        Ok(Self(out))
    }

    pub fn get<'a, L>(&'a self, tree: &InterpTree<L>, label: &NeveuLabel) -> Result<&'a [f64], TreeError> {
        let slot = tree.slot_of(label)?;
        Ok(&self.0[tree.offsets[slot]..tree.offsets[slot] + tree.slot_dim(slot)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl<L> InterpTree<L> {
    pub fn new(entries: Vec<(NeveuLabel, NodeSpec<L>)>) -> Result<Self, TreeError> {
        let mut by_label: BTreeMap<NeveuLabel, NodeSpec<L>> = BTreeMap::new();
        for (label, spec) in entries {
            if label.0.contains(&0) {
                return Err(TreeError::InvalidLabel(label));
            }
            if by_label.contains_key(&label) {
                return Err(TreeError::DuplicateLabel(label));
            }
            by_label.insert(label, spec);
        }
        if !by_label.contains_key(&NeveuLabel::root()) {
            return Err(TreeError::MissingRoot);
        }
        for label in by_label.keys() {
            if let Some(parent) = label.parent() {
                match by_label.get(&parent) {
                    None => return Err(TreeError::OrphanNode(label.clone())),
                    Some(NodeSpec::Leaf(_)) => return Err(TreeError::LeafWithChildren(parent)),
                    Some(NodeSpec::Internal(_)) => {}
                }
            }
        }
        // child indices must be exactly 1..=vertex_count
        for (label, spec) in &by_label {
            if let NodeSpec::Internal(poly) = spec {
                let found: Vec<usize> = by_label
                    .keys()
                    .filter(|c| c.depth() == label.depth() + 1 && c.0.starts_with(&label.0))
                    .map(|c| c.last_index().unwrap())
                    .collect();
                let expected = poly.vertex_count();
                let contiguous = found.iter().enumerate().all(|(k, &i)| i == k + 1);
                if found.len() != expected || !contiguous {
                    return Err(TreeError::ChildCountMismatch {
                        label: label.clone(),
                        expected,
                        found: found.len(),
                    });
                }
            }
        }

        // depth-first pre-order; BTreeMap order on labels is already lexicographic
        // pre-order, but the children lists are filled explicitly.
        let mut nodes: Vec<TreeNode<L>> = Vec::with_capacity(by_label.len());
        let mut index: BTreeMap<NeveuLabel, usize> = BTreeMap::new();
        let mut internal = Vec::new();
        let mut offsets = Vec::new();
        let mut design_len = 0;
        for (label, spec) in by_label {
            let i = nodes.len();
            let kind = match spec {
                NodeSpec::Internal(polytope) => {
                    let slot = internal.len();
                    internal.push(i);
                    offsets.push(design_len);
                    design_len += polytope.dim();
                    NodeKind::Internal { polytope, slot }
                }
                NodeSpec::Leaf(l) => NodeKind::Leaf(l),
            };
            if let Some(parent) = label.parent() {
                let p = index[&parent];
                nodes[p].children.push(i);
            }
            index.insert(label.clone(), i);
            nodes.push(TreeNode {
                label,
                kind,
                children: Vec::new(),
            });
        }
        Ok(Self {
            nodes,
            internal,
            offsets,
            design_len,
        })
    }

    fn find(&self, label: &NeveuLabel) -> Option<usize> {
        // nodes are sorted by label
        self.nodes.binary_search_by(|n| n.label.cmp(label)).ok()
    }

    fn slot_of(&self, label: &NeveuLabel) -> Result<usize, TreeError> {
        match self.find(label).map(|i| &self.nodes[i].kind) {
            Some(NodeKind::Internal { slot, .. }) => Ok(*slot),
            _ => Err(TreeError::UnknownLabel(label.clone())),
        }
    }

    /// Ordered child labels of `label` (empty for leaves).
    pub fn children(&self, label: &NeveuLabel) -> Result<Vec<NeveuLabel>, TreeError> {
        let i = self
            .find(label)
            .ok_or_else(|| TreeError::UnknownLabel(label.clone()))?;
        Ok(self.nodes[i]
            .children
            .iter()
            .map(|&c| self.nodes[c].label.clone())
            .collect())
    }

    /// Number of coordinates of a full design point.
    pub fn design_len(&self) -> usize {
        self.design_len
    }

    pub fn internal_count(&self) -> usize {
        self.internal.len()
    }

    pub fn internal_labels(&self) -> Vec<NeveuLabel> {
        self.internal.iter().map(|&i| self.nodes[i].label.clone()).collect()
    }

    pub fn slot_polytope(&self, slot: usize) -> &Polytope {
        match &self.nodes[self.internal[slot]].kind {
            NodeKind::Internal { polytope, .. } => polytope,
            NodeKind::Leaf(_) => unreachable!("slots index internal nodes"),
        }
    }

    pub fn slot_dim(&self, slot: usize) -> usize {
        self.slot_polytope(slot).dim()
    }

    pub fn slot_offset(&self, slot: usize) -> usize {
        self.offsets[slot]
    }

    pub fn polytope(&self, label: &NeveuLabel) -> Result<&Polytope, TreeError> {
        Ok(self.slot_polytope(self.slot_of(label)?))
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&NeveuLabel, &L)> {
        self.nodes.iter().filter_map(|n| match &n.kind {
            NodeKind::Leaf(l) => Some((&n.label, l)),
            NodeKind::Internal { .. } => None,
        })
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Design point with every subdomain coordinate at its vertex centroid.
    pub fn centroid_design(&self) -> DesignPoint {
        let mut out = Vec::with_capacity(self.design_len);
        for slot in 0..self.internal.len() {
            out.extend_from_slice(self.slot_polytope(slot).centroid());
        }
        DesignPoint(out)
    }

    /// Random strictly interior design point.
    pub fn sample_design<R: rand::Rng>(&self, rng: &mut R) -> DesignPoint {
        let mut out = Vec::with_capacity(self.design_len);
        for slot in 0..self.internal.len() {
            out.extend(self.slot_polytope(slot).sample_with(rng));
        }
        DesignPoint(out)
    }

    /// Design point that selects the leaf `target` exactly: every node on the
    /// path sits on the vertex leading to the next node; the others keep
    /// their centroid.
    pub fn vertex_design(&self, target: &NeveuLabel) -> Result<DesignPoint, TreeError> {
        if self.find(target).is_none() {
            return Err(TreeError::UnknownLabel(target.clone()));
        }
        let mut rho = self.centroid_design().0;
        for depth in 0..target.depth() {
            let node = NeveuLabel(target.0[..depth].to_vec());
            let slot = self.slot_of(&node)?;
            let vertex = self.slot_polytope(slot).vertex(target.0[depth] - 1);
            let off = self.offsets[slot];
            rho[off..off + vertex.len()].copy_from_slice(vertex);
        }
        Ok(DesignPoint(rho))
    }

    fn check_len(&self, rho: &[f64]) -> Result<(), TreeError> {
        if rho.len() != self.design_len {
            return Err(TreeError::DesignLengthMismatch {
                expected: self.design_len,
                got: rho.len(),
            });
        }
        Ok(())
    }

    /// Barycentric coordinates of every subdomain, in slot order.
    pub fn weights(&self, rho: &[f64]) -> Result<Vec<BarycentricResult>, TreeError> {
        self.check_len(rho)?;
        (0..self.internal.len())
            .map(|slot| {
                let dim = self.slot_dim(slot);
                let off = self.offsets[slot];
                self.slot_polytope(slot)
                    .barycentric(&rho[off..off + dim])
                    .map_err(|source| TreeError::Geometry {
                        label: self.nodes[self.internal[slot]].label.clone(),
                        source,
                    })
            })
            .collect()
    }

    fn subtree_value<V: Interpolant>(
        &self,
        node: usize,
        bary: &[BarycentricResult],
        leaf: &impl Fn(&L) -> V,
        out: &mut [Option<V>],
    ) -> V {
        let n = &self.nodes[node];
        let value = match &n.kind {
            NodeKind::Leaf(l) => leaf(l),
            NodeKind::Internal { slot, .. } => {
                let w = &bary[*slot].weights;
                let mut acc = V::zero();
                for (i, &c) in n.children.iter().enumerate() {
                    let child = self.subtree_value(c, bary, leaf, out);
                    acc.add_scaled(w[i], &child);
                }
                acc
            }
        };
        out[node] = Some(value.clone());
        value
    }

    /// Recursive interpolation of the leaf values given by `leaf`.
    pub fn eval_with<V: Interpolant>(&self, rho: &[f64], leaf: impl Fn(&L) -> V) -> Result<V, TreeError> {
        let bary = self.weights(rho)?;
        let mut scratch = vec![None; self.nodes.len()];
        Ok(self.subtree_value(0, &bary, &leaf, &mut scratch))
    }

    /// Derivatives of the interpolated value with respect to every subdomain
    /// coordinate: `out[slot][k]` is the derivative along component `k` of
    /// that node's design point.
    pub fn eval_drho_with<V: Interpolant>(
        &self,
        rho: &[f64],
        leaf: impl Fn(&L) -> V,
    ) -> Result<Vec<Vec<V>>, TreeError> {
        let bary = self.weights(rho)?;
        let mut values = vec![None; self.nodes.len()];
        self.subtree_value(0, &bary, &leaf, &mut values);
        let mut out: Vec<Vec<V>> = (0..self.internal.len())
            .map(|slot| vec![V::zero(); self.slot_dim(slot)])
            .collect();
        self.drho_k(0, 1.0, &bary, &values, &mut out);
        Ok(out)
    }

    fn drho_k<V: Interpolant>(
        &self,
        node: usize,
        k: f64,
        bary: &[BarycentricResult],
        values: &[Option<V>],
        out: &mut [Vec<V>],
    ) {
        let n = &self.nodes[node];
        let NodeKind::Internal { slot, .. } = &n.kind else {
            return;
        };
        let b = &bary[*slot];
        for (i, &c) in n.children.iter().enumerate() {
            let child = values[c].as_ref().expect("subtree values computed");
            for (d, slot_out) in out[*slot].iter_mut().enumerate() {
                slot_out.add_scaled(k * b.gradient(i)[d], child);
            }
        }
        for (i, &c) in n.children.iter().enumerate() {
            self.drho_k(c, k * b.weights[i], bary, values, out);
        }
    }

    /// Reference evaluation: sum over leaves of the product of weights along
    /// the root-to-leaf path times the leaf value.
    pub fn flatten_oracle_with<V: Interpolant>(
        &self,
        rho: &[f64],
        leaf: impl Fn(&L) -> V,
    ) -> Result<V, TreeError> {
        let mut acc = V::zero();
        for (w, l) in self.leaf_products(rho)? {
            acc.add_scaled(w, &leaf(l));
        }
        Ok(acc)
    }

    /// Product weight of every leaf (pre-order), i.e. its share in the mixture.
    pub fn leaf_products(&self, rho: &[f64]) -> Result<Vec<(f64, &L)>, TreeError> {
        let bary = self.weights(rho)?;
        let mut out = Vec::new();
        let mut stack = vec![(0usize, 1.0f64)];
        while let Some((node, w)) = stack.pop() {
            let n = &self.nodes[node];
            match &n.kind {
                NodeKind::Leaf(l) => out.push((w, l)),
                NodeKind::Internal { slot, .. } => {
                    for (i, &c) in n.children.iter().enumerate().rev() {
                        stack.push((c, w * bary[*slot].weights[i]));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Projects every subdomain coordinate onto its polytope.
    pub fn project_design(&self, raw: &[f64]) -> Result<DesignPoint, TreeError> {
        self.check_len(raw)?;
        let mut out = raw.to_vec();
        self.project_in_place(&mut out);
        Ok(DesignPoint(out))
    }

    pub(crate) fn project_in_place(&self, rho: &mut [f64]) {
        for slot in 0..self.internal.len() {
            let off = self.offsets[slot];
            let dim = self.slot_dim(slot);
            let p = self.slot_polytope(slot).project(&rho[off..off + dim]);
            rho[off..off + dim].copy_from_slice(&p);
        }
    }

    /// Whether every subdomain coordinate lies in its polytope within `tol`.
    pub fn is_feasible(&self, rho: &[f64], tol: f64) -> bool {
        (0..self.internal.len()).all(|slot| {
            let off = self.offsets[slot];
            self.slot_polytope(slot)
                .contains(&rho[off..off + self.slot_dim(slot)], tol)
        })
    }
}

impl<L> InterpTree<L> {
    /// Human-readable listing, one node per line.
    pub fn listing_with(&self, leaf_name: impl Fn(&L) -> String) -> String {
        let mut s = String::new();
        for n in &self.nodes {
            let indent = "  ".repeat(n.label.depth());
            match &n.kind {
                NodeKind::Internal { polytope, .. } => {
                    let kids: Vec<String> =
                        n.children.iter().map(|&c| self.nodes[c].label.to_string()).collect();
                    s.push_str(&format!(
                        "{indent}{} {} (dim {}) -> {}\n",
                        n.label,
                        polytope.label(),
                        polytope.dim(),
                        kids.join(" ")
                    ));
                }
                NodeKind::Leaf(l) => s.push_str(&format!("{indent}{} leaf {}\n", n.label, leaf_name(l))),
            }
        }
        s
    }
}

impl<L: fmt::Display> InterpTree<L> {
    pub fn listing(&self) -> String {
        self.listing_with(|l| l.to_string())
    }
}

/// Serializable tree description: internal nodes name a polytope, leaves a material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub nodes: Vec<TreeNodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeSpec {
    pub label: NeveuLabel,
    #[serde(flatten)]
    pub content: TreeNodeContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNodeContent {
    Internal { polytope: PolytopeSpec },
    Leaf { material: String },
}

impl TreeSpec {
    pub fn internal(&mut self, label: &[usize], polytope: PolytopeSpec) -> &mut Self {
        self.nodes.push(TreeNodeSpec {
            label: label.into(),
            content: TreeNodeContent::Internal { polytope },
        });
        self
    }

    pub fn leaf(&mut self, label: &[usize], material: &str) -> &mut Self {
        self.nodes.push(TreeNodeSpec {
            label: label.into(),
            content: TreeNodeContent::Leaf {
                material: material.into(),
            },
        });
        self
    }

    /// The six-dimensional rotor tree: a triangle {air, steel, excitation},
    /// excitation a segment {magnets, conductors}, magnets a 12-gon of
    /// orientations and conductors a segment {+J, -J}.
    pub fn recursive_rotor() -> Self {
        let mut spec = TreeSpec { nodes: Vec::new() };
        spec.internal(&[], PolytopeSpec::RegularPolygon { n: 3 })
            .leaf(&[1], "air")
            .leaf(&[2], "steel")
            .internal(&[3], PolytopeSpec::Segment { a: 0.0, b: 1.0 })
            .internal(&[3, 1], PolytopeSpec::RegularPolygon { n: 12 })
            .internal(&[3, 2], PolytopeSpec::Segment { a: 0.0, b: 1.0 })
            .leaf(&[3, 2, 1], "conductor_pos")
            .leaf(&[3, 2, 2], "conductor_neg");
        for k in 0..12 {
            spec.leaf(&[3, 1, k + 1], &format!("pm_{:03}", 30 * k));
        }
        spec
    }

    /// Single 16-gon carrying the catalogue in order.
    pub fn hexadecagon(catalogue: &MaterialCatalogue) -> Self {
        let mut spec = TreeSpec { nodes: Vec::new() };
        spec.internal(
            &[],
            PolytopeSpec::RegularPolygon {
                n: catalogue.len(),
            },
        );
        for (k, m) in catalogue.entries.iter().enumerate() {
            spec.leaf(&[k + 1], &m.name);
        }
        spec
    }

    /// Bipyramid whose equator carries the magnets and conductors, with steel
    /// on the upper apex and air on the lower one.
    pub fn diamond(catalogue: &MaterialCatalogue) -> Self {
        let sources: Vec<&MaterialModel> = catalogue
            .entries
            .iter()
            .filter(|m| matches!(m.kind, MaterialKind::Magnet | MaterialKind::Conductor))
            .collect();
        let mut spec = TreeSpec { nodes: Vec::new() };
        spec.internal(&[], PolytopeSpec::Diamond { m: sources.len() });
        for (k, m) in sources.iter().enumerate() {
            spec.leaf(&[k + 1], &m.name);
        }
        let steel = catalogue.entries.iter().find(|m| m.kind == MaterialKind::Steel);
        let air = catalogue.entries.iter().find(|m| m.kind == MaterialKind::Air);
        spec.leaf(&[sources.len() + 1], steel.map_or("steel", |m| m.name.as_str()));
        spec.leaf(&[sources.len() + 2], air.map_or("air", |m| m.name.as_str()));
        spec
    }
}

/// Interpolation tree whose leaves index into a material catalogue.
#[derive(Debug, Clone)]
pub struct MaterialTree {
    pub tree: InterpTree<usize>,
    pub catalogue: MaterialCatalogue,
}

pub fn build_tree(spec: &TreeSpec, catalogue: &MaterialCatalogue) -> Result<MaterialTree, TreeError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(spec.nodes.len());
    for node in &spec.nodes {
        let kind = match &node.content {
            TreeNodeContent::Internal { polytope } => {
                NodeSpec::Internal(polytope.build().map_err(|source| TreeError::Geometry {
                    label: node.label.clone(),
                    source,
                })?)
            }
            TreeNodeContent::Leaf { material } => {
                let idx = catalogue
                    .index_of(material)
                    .ok_or_else(|| TreeError::UnknownMaterial(material.clone()))?;
                if !seen.insert(idx) {
                    return Err(TreeError::DuplicateMaterialLeaf(material.clone()));
                }
                NodeSpec::Leaf(idx)
            }
        };
        entries.push((node.label.clone(), kind));
    }
    Ok(MaterialTree {
        tree: InterpTree::new(entries)?,
        catalogue: catalogue.clone(),
    })
}

fn polarization_only(m: &MaterialModel, b: [f64; 2]) -> PropertyValue {
    PropertyValue {
        polarization: m.polarization(b),
        current_density: m.current_density,
        d_polarization: [[0.0; 2]; 2],
    }
}

fn derivative_only(m: &MaterialModel, b: [f64; 2]) -> PropertyValue {
    PropertyValue {
        d_polarization: m.d_polarization_db(b),
        ..Default::default()
    }
}

impl MaterialTree {
    pub fn design_len(&self) -> usize {
        self.tree.design_len()
    }

    pub fn material(&self, leaf: usize) -> &MaterialModel {
        self.catalogue.get(leaf)
    }

    /// Interpolated polarization and current density at flux density `b`.
    pub fn eval(&self, rho: &[f64], b: [f64; 2]) -> Result<PropertyValue, TreeError> {
        self.tree.eval_with(rho, |&i| polarization_only(self.catalogue.get(i), b))
    }

    /// Interpolated polarization derivative with respect to `B`.
    pub fn eval_db(&self, rho: &[f64], b: [f64; 2]) -> Result<PropertyValue, TreeError> {
        self.tree.eval_with(rho, |&i| derivative_only(self.catalogue.get(i), b))
    }

    /// Value and `B`-derivative in a single recursion.
    pub fn eval_full(&self, rho: &[f64], b: [f64; 2]) -> Result<PropertyValue, TreeError> {
        self.tree.eval_with(rho, |&i| self.catalogue.get(i).property(b))
    }

    /// Derivatives of polarization and current density with respect to every
    /// design coordinate, one recursion from the root.
    pub fn eval_drho(&self, rho: &[f64], b: [f64; 2]) -> Result<Vec<Vec<PropertyValue>>, TreeError> {
        self.tree
            .eval_drho_with(rho, |&i| polarization_only(self.catalogue.get(i), b))
    }

    pub fn flatten_oracle(&self, rho: &[f64], b: [f64; 2]) -> Result<PropertyValue, TreeError> {
        self.tree
            .flatten_oracle_with(rho, |&i| polarization_only(self.catalogue.get(i), b))
    }

    /// Batched [`MaterialTree::eval_full`]: one `(rho, B)` pair per entry.
    pub fn eval_full_batch(
        &self,
        rho: &[f64],
        b: &[[f64; 2]],
    ) -> Result<Vec<PropertyValue>, TreeError> {
        let n = self.design_len();
        b.par_iter()
            .enumerate()
            .map(|(e, &be)| self.eval_full(&rho[e * n..(e + 1) * n], be))
            .collect()
    }

    pub fn eval_batch(&self, rho: &[f64], b: &[[f64; 2]]) -> Result<Vec<PropertyValue>, TreeError> {
        let n = self.design_len();
        b.par_iter()
            .enumerate()
            .map(|(e, &be)| self.eval(&rho[e * n..(e + 1) * n], be))
            .collect()
    }

    pub fn eval_drho_batch(
        &self,
        rho: &[f64],
        b: &[[f64; 2]],
    ) -> Result<Vec<Vec<Vec<PropertyValue>>>, TreeError> {
        let n = self.design_len();
        b.par_iter()
            .enumerate()
            .map(|(e, &be)| self.eval_drho(&rho[e * n..(e + 1) * n], be))
            .collect()
    }

    /// Catalogue index of the leaf with the largest product weight.
    pub fn dominant_material(&self, rho: &[f64]) -> Result<usize, TreeError> {
        let products = self.tree.leaf_products(rho)?;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (w, &i) in products {
            if w > best.0 {
                best = (w, i);
            }
        }
        Ok(best.1)
    }

    /// Total product weight carried by leaves of the given kind.
    pub fn kind_fraction(&self, rho: &[f64], kind: MaterialKind) -> Result<f64, TreeError> {
        Ok(self
            .tree
            .leaf_products(rho)?
            .into_iter()
            .filter(|(_, &i)| self.catalogue.get(i).kind == kind)
            .map(|(w, _)| w)
            .sum())
    }

    pub fn listing(&self) -> String {
        self.tree
            .listing_with(|&i| self.catalogue.get(i).name.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{air_model, default_catalogue, steel_model};

    fn seg() -> Polytope {
        Polytope::segment(0.0, 1.0).unwrap()
    }

    fn depth2() -> InterpTree<f64> {
        // root segment {A, N}; N segment {B, C}
        InterpTree::new(vec![
            (NeveuLabel::root(), NodeSpec::Internal(seg())),
            (NeveuLabel(vec![1]), NodeSpec::Leaf(1.0)),
            (NeveuLabel(vec![2]), NodeSpec::Internal(seg())),
            (NeveuLabel(vec![2, 1]), NodeSpec::Leaf(2.0)),
            (NeveuLabel(vec![2, 2]), NodeSpec::Leaf(4.0)),
        ])
        .unwrap()
    }

    #[test]
    fn label_algebra() {
        let a = NeveuLabel(vec![1, 2]);
        let b = NeveuLabel(vec![3]);
        let c = NeveuLabel(vec![4, 5]);
        assert_eq!(a.concat(&b).concat(&c), a.concat(&b.concat(&c)));
        assert_eq!(a.child(7).parent(), Some(a.clone()));
        assert_eq!(NeveuLabel::root().parent(), None);
        assert_eq!(a.to_string(), "[1,2]");
        assert_eq!(NeveuLabel::root().slug(), "root");
    }

    #[test]
    fn depth_one_children() {
        let t = InterpTree::new(vec![
            (NeveuLabel::root(), NodeSpec::Internal(seg())),
            (NeveuLabel(vec![1]), NodeSpec::Leaf(1.0)),
            (NeveuLabel(vec![2]), NodeSpec::Leaf(3.0)),
        ])
        .unwrap();
        assert_eq!(
            t.children(&NeveuLabel::root()).unwrap(),
            vec![NeveuLabel(vec![1]), NeveuLabel(vec![2])]
        );
        assert!(t.children(&NeveuLabel(vec![1])).unwrap().is_empty());
        assert!(matches!(
            t.children(&NeveuLabel(vec![9])),
            Err(TreeError::UnknownLabel(_))
        ));
        // linear case: derivative is kappa_2 - kappa_1
        let d = t.eval_drho_with(&[0.4], |&v| v).unwrap();
        assert!((d[0][0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn depth_two_hand_values() {
        let t = depth2();
        let v = t.eval_with(&[0.5, 0.5], |&v| v).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        assert!((t.flatten_oracle_with(&[0.5, 0.5], |&v| v).unwrap() - 2.0).abs() < 1e-15);
        let d = t.eval_drho_with(&[0.5, 0.5], |&v| v).unwrap();
        assert!((d[0][0] - 2.0).abs() < 1e-15);
        assert!((d[1][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structural_errors() {
        let tri = Polytope::regular_polygon(3).unwrap();
        let err = InterpTree::new(vec![
            (NeveuLabel::root(), NodeSpec::Internal(tri)),
            (NeveuLabel(vec![1]), NodeSpec::Leaf(1.0)),
            (NeveuLabel(vec![2]), NodeSpec::Leaf(2.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, TreeError::ChildCountMismatch { expected: 3, found: 2, .. }));

        let err = InterpTree::new(vec![
            (NeveuLabel::root(), NodeSpec::Internal(seg())),
            (NeveuLabel(vec![1]), NodeSpec::Leaf(1.0)),
            (NeveuLabel(vec![2]), NodeSpec::Leaf(2.0)),
            (NeveuLabel(vec![3, 1]), NodeSpec::Leaf(2.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, TreeError::OrphanNode(_)));

        let err = InterpTree::new(vec![
            (NeveuLabel::root(), NodeSpec::Internal(seg())),
            (NeveuLabel(vec![1]), NodeSpec::Leaf(1.0)),
            (NeveuLabel(vec![3]), NodeSpec::Leaf(2.0)),
        ])
        .unwrap_err();
        assert!(matches!(err, TreeError::ChildCountMismatch { .. }));

        let err = InterpTree::<f64>::new(vec![(NeveuLabel(vec![1]), NodeSpec::Leaf(1.0))]).unwrap_err();
        assert_eq!(err, TreeError::MissingRoot);
    }

    #[test]
    fn duplicate_material_leaf() {
        let mut spec = TreeSpec { nodes: Vec::new() };
        spec.internal(&[], PolytopeSpec::Segment { a: 0.0, b: 1.0 })
            .leaf(&[1], "air")
            .leaf(&[2], "air");
        let err = build_tree(&spec, &default_catalogue()).unwrap_err();
        assert_eq!(err, TreeError::DuplicateMaterialLeaf("air".into()));
    }

    #[test]
    fn recursive_rotor_tree_shape() {
        let t = build_tree(&TreeSpec::recursive_rotor(), &default_catalogue()).unwrap();
        assert_eq!(t.tree.internal_count(), 4);
        assert_eq!(t.design_len(), 6);
        assert_eq!(t.tree.leaf_count(), 16);
        let kids = t.tree.children(&NeveuLabel::root()).unwrap();
        assert_eq!(kids.len(), 3);
        assert_eq!(t.tree.children(&kids[0]).unwrap().len(), 0);
        assert_eq!(t.tree.children(&kids[1]).unwrap().len(), 0);
        assert_eq!(t.tree.children(&kids[2]).unwrap().len(), 2);
        assert!(t.listing().contains("leaf pm_330"));
    }

    #[test]
    fn vertex_selects_air() {
        let mut cat = default_catalogue();
        cat.entries = vec![air_model(), steel_model(1.9, 0.999).unwrap()];
        let mut spec = TreeSpec { nodes: Vec::new() };
        spec.internal(&[], PolytopeSpec::Segment { a: 0.0, b: 1.0 })
            .leaf(&[1], "air")
            .leaf(&[2], "steel");
        let t = build_tree(&spec, &cat).unwrap();
        let v = t.eval(&[0.0], [0.7, -0.2]).unwrap();
        assert_eq!(v.polarization, [0.0, 0.0]);
        assert_eq!(v.current_density, 0.0);
        // half air, half steel: half of the steel tensor
        let b = [0.8, 0.3];
        let mixed = t.eval_db(&[0.5], b).unwrap().d_polarization;
        let steel = cat.entries[1].d_polarization_db(b);
        for i in 0..2 {
            for j in 0..2 {
                assert!((mixed[i][j] - 0.5 * steel[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn design_point_from_map() {
        let t = depth2();
        let mut m = BTreeMap::new();
        m.insert(NeveuLabel::root(), vec![0.25]);
        m.insert(NeveuLabel(vec![2]), vec![0.75]);
        let p = DesignPoint::from_map(&t, &m).unwrap();
        assert_eq!(p.0, vec![0.25, 0.75]);
        assert_eq!(p.get(&t, &NeveuLabel(vec![2])).unwrap(), &[0.75]);
        m.insert(NeveuLabel(vec![1]), vec![0.1]);
        assert!(matches!(DesignPoint::from_map(&t, &m), Err(TreeError::UnknownLabel(_))));
    }

    #[test]
    fn project_design_is_per_node() {
        let t = depth2();
        let p = t.project_design(&[1.8, 0.3]).unwrap();
        assert_eq!(p.0, vec![1.0, 0.3]);
        let q = t.project_design(&[0.2, 0.3]).unwrap();
        assert_eq!(q.0, vec![0.2, 0.3]);
    }
}
