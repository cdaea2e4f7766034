use std::sync::Arc;

use nalgebra::DVector;

use super::AccelError;

/// Ordered interface DOFs of the global model with the coordinates of the
/// node owning each DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceLayout {
    dofs: Vec<usize>,
    coords: Vec<[f64; 2]>,
}

impl InterfaceLayout {
    pub fn new(dofs: Vec<usize>, coords: Vec<[f64; 2]>) -> Result<Self, AccelError> {
        if dofs.len() != coords.len() {
            return Err(AccelError::InvalidInput(format!(
                "{} DOFs but {} coordinates",
                dofs.len(),
                coords.len()
            )));
        }
        Ok(Self { dofs, coords })
    }

    /// Layout without geometric information, mostly for tests.
    pub fn anonymous(n: usize) -> Arc<Self> {
        Arc::new(Self {
            dofs: (0..n).collect(),
            coords: vec![[0.0; 2]; n],
        })
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
}

/// Nodal field on the interface DOFs (corrective loads, reactions,
/// residuals, displacements).
#[derive(Debug, Clone)]
pub struct InterfaceVector {
    values: DVector<f64>,
    layout: Arc<InterfaceLayout>,
}

impl PartialEq for InterfaceVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl InterfaceVector {
    pub fn new(layout: Arc<InterfaceLayout>, values: Vec<f64>) -> Result<Self, AccelError> {
        if values.len() != layout.len() {
            return Err(AccelError::InvalidInput(format!(
                "{} values for an interface of {} DOFs",
                values.len(),
                layout.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AccelError::NonFinite);
        }
        Ok(Self {
            values: DVector::from_vec(values),
            layout,
        })
    }

    pub fn zeros(layout: Arc<InterfaceLayout>) -> Self {
        Self {
            values: DVector::zeros(layout.len()),
            layout,
        }
    }

    pub(crate) fn from_dvector(
        layout: Arc<InterfaceLayout>,
        values: DVector<f64>,
    ) -> Result<Self, AccelError> {
        debug_assert_eq!(values.len(), layout.len());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AccelError::NonFinite);
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn layout(&self) -> &Arc<InterfaceLayout> {
        &self.layout
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check(&self, other: &Self) -> Result<(), AccelError> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(AccelError::LayoutMismatch)
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.norm()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.amax()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, AccelError> {
        self.check(other)?;
        Ok(self.values.dot(&other.values))
    }

    pub fn add(&self, other: &Self) -> Result<Self, AccelError> {
        self.check(other)?;
        Ok(Self {
            values: &self.values + &other.values,
            layout: self.layout.clone(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, AccelError> {
        self.check(other)?;
        Ok(Self {
            values: &self.values - &other.values,
            layout: self.layout.clone(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            values: &self.values * c,
            layout: self.layout.clone(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self, AccelError> {
        self.check(other)?;
        Ok(Self {
            values: &self.values + &other.values * c,
            layout: self.layout.clone(),
        })
    }
}
