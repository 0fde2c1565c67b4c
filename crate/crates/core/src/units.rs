//! Per-unit conversions. Everything inside the engine is per-unit on the
//! configured power base; kW, kWh and ¢/kWh only appear at the I/O edge.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    /// Length of one market interval in hours.
    pub delta_hours: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            s_base_kva: 100.0,
            v_base_kv: 4.16,
            delta_hours: 0.5,
        }
    }
}

impl Units {
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base_kva
    }

    /// Stored energy: kWh to per-unit hours.
    pub fn kwh_to_puh(&self, kwh: f64) -> f64 {
        kwh / self.s_base_kva
    }

    pub fn puh_to_kwh(&self, puh: f64) -> f64 {
        puh * self.s_base_kva
    }

    /// A quadratic coefficient in ¢/kW² (or ¢/kWh²) becomes ¢/pu².
    pub fn quad_coef_to_pu(&self, per_kw2: f64) -> f64 {
        per_kw2 * self.s_base_kva * self.s_base_kva
    }

    pub fn quad_coef_from_pu(&self, per_pu2: f64) -> f64 {
        per_pu2 / (self.s_base_kva * self.s_base_kva)
    }

    /// Internal prices are ¢ per (p.u. injection held for one interval).
    pub fn price_to_cents_per_kwh(&self, internal: f64) -> f64 {
        internal / (self.s_base_kva * self.delta_hours)
    }

    pub fn price_from_cents_per_kwh(&self, c_per_kwh: f64) -> f64 {
        c_per_kwh * self.s_base_kva * self.delta_hours
    }

    /// Squared voltage magnitude from a linear p.u. magnitude.
    pub fn squared(v_pu: f64) -> f64 {
        v_pu * v_pu
    }

    /// Header line recorded at the top of every emitted CSV.
    pub fn header_comment(&self) -> String {
        format!(
            "# s_base_kva={},v_base_kv={},delta_hours={},currency=cents",
            self.s_base_kva, self.v_base_kv, self.delta_hours
        )
    }
}
