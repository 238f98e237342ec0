//! Prints the bundled demonstration encounter as a CDM.
//!
//! ```text
//! cargo run -p cola-core --example bundled_cdm > fixtures/bundled.cdm
//! ```

use cola_core::cdm::write_cdm;
use cola_core::scenario::bundled_encounter;

fn main() {
    let encounter = bundled_encounter(1e-5).expect("calibration");
    let creation = encounter.primary.epoch.offset(-2.0 * 86_400.0);
    print!("{}", write_cdm(&encounter.to_cdm(creation)));
}
