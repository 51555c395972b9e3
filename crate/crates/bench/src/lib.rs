//! Fixtures shared by the benchmarks.

use tractable::eoq::{synthetic_panel, ShipmentPanel, SyntheticPanelSpec};
use tractable::trade_equilibrium::{initial_state, EquilibriumState, World, WorldConfig};
use tractable::{Polynomial, PowerSum};

/// Quartics with four real roots spread over a few orders of magnitude.
pub fn quartics(n: usize) -> Vec<Polynomial> {
    (0..n)
        .map(|i| {
            let s = 1.0 + i as f64 / n as f64;
            Polynomial::from_roots(&[-2.0 * s, 0.01 * s, 0.7, 30.0 / s])
        })
        .collect()
}

pub fn income_demand() -> PowerSum {
    PowerSum::income_form(1.0, -0.5, 2.5, 0.4, 1.0)
}

pub fn shipment_panel(seed: u64) -> ShipmentPanel {
    let records = synthetic_panel(&SyntheticPanelSpec { seed, ..Default::default() });
    ShipmentPanel::from_records(&records).unwrap()
}

pub fn small_world() -> (World, EquilibriumState) {
    let world = World::new(&WorldConfig::desk(3, 4, 2, 0.225)).unwrap();
    let state = initial_state(&world, 1);
    (world, state)
}
