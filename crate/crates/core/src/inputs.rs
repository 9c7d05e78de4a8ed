use crate::lattice::QPParams;
use crate::potential::{default_potential, PotentialSpec};
use crate::profile::ParameterProfile;
use crate::resonance::DualTable;

/// Frequency data, potential and the cached dual table for Step-II scans.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub params: QPParams,
    pub spec: PotentialSpec,
    pub table: DualTable,
}

impl Inputs {
    pub fn new(params: QPParams, spec: PotentialSpec, profile: &ParameterProfile) -> Self {
        let table = DualTable::new(2 * profile.r1, &params);
        Inputs { params, spec, table }
    }

    pub fn default_for(profile: &ParameterProfile) -> Self {
        let params = QPParams::default_alpha();
        let spec = default_potential(&params);
        Self::new(params, spec, profile)
    }

    pub fn with_spec(&self, spec: PotentialSpec) -> Self {
        Inputs { params: self.params.clone(), spec, table: self.table.clone() }
    }
}
