#![no_main]

use libfuzzer_sys::fuzz_target;
use ofo_core::data::Grid;
use ofo_core::network::solve_power_flow;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = Grid::from_json_bytes(data) {
        let (p, v) = grid.network.scheduled_setpoints();
        let _ = solve_power_flow(&grid.network, &p, &v, None);
    }
});
