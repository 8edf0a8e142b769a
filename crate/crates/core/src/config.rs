/// Shared numerical tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Structural identities: normalization, row sums, stationarity of ρ.
    pub structural: f64,
    /// Derived identities: adjointness, stationarity residual of the tilted dynamics.
    pub identity: f64,
    /// Smallest admissible weight of a strictly positive distribution.
    pub positivity: f64,
    /// Components of an evolved distribution below this value are clipped.
    pub clip_floor: f64,
    /// Commutator threshold for deciding that a generator is normal.
    pub normality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural: 1e-12,
            identity: 1e-10,
            positivity: 1e-12,
            clip_floor: 1e-15,
            normality: 1e-10,
        }
    }
}

impl Tolerances {
    /// Replaces the identity tolerance (used by the `--tol` CLI flag).
    pub fn with_identity(mut self, tol: f64) -> Self {
        self.identity = tol;
        self
    }
}
