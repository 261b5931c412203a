use mcflow::geometry::*;
use std::path::Path;

fn main() {
    let net = FractureNetwork::from_file(Path::new("../../geometry/paper_fig1.txt"))
        .or_else(|_| FractureNetwork::from_file(Path::new("geometry/paper_fig1.txt")))
        .unwrap();
    let fine = build_grid(400, 200, 2.0, 1.0).unwrap();
    let coarse = build_grid(40, 20, 2.0, 1.0).unwrap();
    let m = mesh_fractures(&net, &fine).unwrap();
    let map = build_coarse_map(&fine, &coarse, &m).unwrap();
    println!("total length {:.4}", net.total_length());
    println!("fine fracture cells: {} (target 1474, window 1400-1548)", m.n_cells());
    println!("coarse fracture cells: {} (target 156, window 140-172)", map.fracture.len());
    // well box check
    let mut well_cells = 0;
    for fc in &m.cells {
        let (x, y) = fine.cell_center(fc.host);
        if x >= 1.85 && x <= 1.9 && y >= 0.35 && y <= 0.4 { well_cells += 1; }
    }
    println!("fracture cells with host center in well box: {}", well_cells);
}
