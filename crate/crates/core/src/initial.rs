//! Initial magnetizations: constant vectors, named profiles, or field files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::field::{FieldError, MagnetizationField};
use crate::io::{read_field_csv, IoError};
use crate::mesh::Mesh;
use crate::vec3::Vec3;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("unknown initial profile `{name}` (registered: {known})")]
    UnknownProfile { name: String, known: String },
    #[error("initial field file has {got} nodes but the mesh has {expected}")]
    FileLength { expected: usize, got: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialCondition {
    Constant { vector: Vec3 },
    Profile { name: String },
    File { path: PathBuf },
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self::Profile { name: "rotation".into() }
    }
}

/// A named, smooth map from the domain to ℝ³ (normalized after sampling).
pub trait Profile: Send + Sync {
    fn name(&self) -> &str;
    fn sample(&self, x: &[f64], extents: &[f64]) -> Vec3;
}

/// In-plane rotation `(cos 2πx/L, sin 2πx/L, 0)` along the first axis.
#[derive(Debug, Clone, Copy)]
pub struct Rotation;

impl Profile for Rotation {
    fn name(&self) -> &str {
        "rotation"
    }

    fn sample(&self, x: &[f64], extents: &[f64]) -> Vec3 {
        let phase = 2.0 * PI * x[0] / extents[0];
        [phase.cos(), phase.sin(), 0.0]
    }
}

/// `(sin φ, 0, cos φ)` with `φ = (π/4) Π_d cos(π x_d / L_d)`; its normal
/// derivative vanishes on the boundary.
#[derive(Debug, Clone, Copy)]
pub struct Bump;

impl Profile for Bump {
    fn name(&self) -> &str {
        "bump"
    }

    fn sample(&self, x: &[f64], extents: &[f64]) -> Vec3 {
        let phi = 0.25 * PI * x.iter().zip(extents).map(|(&xi, &l)| (PI * xi / l).cos()).product::<f64>();
        [phi.sin(), 0.0, phi.cos()]
    }
}

pub struct ProfileRegistry {
    profiles: BTreeMap<String, Box<dyn Profile>>,
}

impl fmt::Debug for ProfileRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProfileRegistry").field("profiles", &self.names()).finish()
    }
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        let mut registry = Self { profiles: BTreeMap::new() };
        registry.register(Box::new(Rotation));
        registry.register(Box::new(Bump));
        registry
    }
}

impl ProfileRegistry {
    pub fn register(&mut self, profile: Box<dyn Profile>) {
        self.profiles.insert(profile.name().to_string(), profile);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Profile> {
        self.profiles.get(name).map(|p| p.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.profiles.keys().map(String::as_str).collect()
    }
}

pub fn init_state(
    initial: &InitialCondition,
    mesh: &Mesh,
    profiles: &ProfileRegistry,
) -> Result<MagnetizationField, InitError> {
    let n = mesh.node_count();
    let raw: Vec<Vec3> = match initial {
        InitialCondition::Constant { vector } => vec![*vector; n],
        InitialCondition::Profile { name } => {
            let profile = profiles
                .get(name)
                .ok_or_else(|| InitError::UnknownProfile { name: name.clone(), known: profiles.names().join(", ") })?;
            let extents = &mesh.spec().extents;
            (0..n).map(|j| profile.sample(mesh.point(j), extents)).collect()
        }
        InitialCondition::File { path } => {
            let values = read_field_csv(path)?;
            if values.len() != n {
                return Err(InitError::FileLength { expected: n, got: values.len() });
            }
            values
        }
    };
    Ok(MagnetizationField::from_normalized(raw)?)
}
