//! Euler characteristic and genus of closed triangle surfaces, solid
//! voxelization, slab partitioning and voxel boundary extraction.

mod voxel;

pub use voxel::{boundary_surface, partition, partition_grid, validate_ratios, voxelize, Region, SubregionPartition, VoxelGrid};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::primitives::TriMesh;

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// `V - E + F`, with `E` counted as distinct undirected vertex pairs.
///
/// Only vertices referenced by a face are counted.
pub fn euler_characteristic(mesh: &TriMesh) -> i64 {
    let mut used = vec![false; mesh.vertices.len()];
    let mut edges = std::collections::HashSet::new();
    for f in &mesh.faces {
        for k in 0..3 {
            used[f[k]] = true;
            edges.insert(edge_key(f[k], f[(k + 1) % 3]));
        }
    }
    let v = used.iter().filter(|&&u| u).count() as i64;
    v - edges.len() as i64 + mesh.faces.len() as i64
}

/// Checks that every edge is shared by exactly two faces.
pub fn check_closed(mesh: &TriMesh) -> Result<()> {
    if !mesh.indices_in_range() {
        return Err(Error::Topology("face index out of range".into()));
    }
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            *counts.entry(edge_key(f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    if let Some((e, n)) = counts.iter().find(|(_, &n)| n != 2) {
        return Err(Error::Topology(format!(
            "edge ({}, {}) is shared by {n} faces; surface is not a closed 2-manifold",
            e.0, e.1
        )));
    }
    Ok(())
}

pub fn check_oriented(mesh: &TriMesh) -> Result<()> {
    let mut directed = std::collections::HashSet::new();
    for f in &mesh.faces {
        for k in 0..3 {
            if !directed.insert((f[k], f[(k + 1) % 3])) {
                return Err(Error::Topology(format!(
                    "directed edge ({}, {}) used twice; orientation is inconsistent",
                    f[k],
                    f[(k + 1) % 3]
                )));
            }
        }
    }
    Ok(())
}

/// Face-connected components (faces sharing a vertex are connected).
pub fn connected_components(mesh: &TriMesh) -> Vec<TriMesh> {
    let mut uf = UnionFind::new(mesh.vertices.len());
    for f in &mesh.faces {
        uf.union(f[0], f[1]);
        uf.union(f[1], f[2]);
    }
    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut order = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let r = uf.find(f[0]);
        by_root
            .entry(r)
            .or_insert_with(|| {
                order.push(r);
                Vec::new()
            })
            .push(fi);
    }
    order
        .into_iter()
        .map(|r| {
            let mut remap = HashMap::new();
            let mut out = TriMesh::default();
            for &fi in &by_root[&r] {
                let face = mesh.faces[fi].map(|v| {
                    *remap.entry(v).or_insert_with(|| {
                        out.vertices.push(mesh.vertices[v]);
                        out.vertices.len() - 1
                    })
                });
                out.faces.push(face);
            }
            out
        })
        .collect()
}

/// Genus `(2 - chi) / 2` of a closed, oriented, connected surface.
pub fn genus(mesh: &TriMesh) -> Result<i64> {
    if mesh.faces.is_empty() {
        return Err(Error::Topology("mesh has no faces".into()));
    }
    check_closed(mesh)?;
    check_oriented(mesh)?;
    let components = connected_components(mesh).len();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let chi = euler_characteristic(mesh);
    if chi % 2 != 0 {
        return Err(Error::Topology(format!("odd Euler characteristic {chi}")));
    }
    Ok((2 - chi) / 2)
}

/// Genus of every connected component, in face order of first appearance.
pub fn component_genera(mesh: &TriMesh) -> Result<Vec<i64>> {
    connected_components(mesh).iter().map(genus).collect()
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
