use cubeforge::anf::{Poly, Var};
use cubeforge::trail::superpoly_direct;
use std::time::Instant;

fn main() {
    let rounds_grid = [320u32, 360, 400, 440];
    for len in [2usize, 3] {
        for start in (0..=(80 - len as u8)).step_by(6) {
            let cube: Vec<u8> = (start..start + len as u8).collect();
            for &rounds in &rounds_grid {
                let t0 = Instant::now();
                let sp = match superpoly_direct(&cube, rounds) {
                    Ok(p) => p,
                    Err(e) => {
                        println!("cube {:?} R{}: error {:?}", cube, rounds, e);
                        continue;
                    }
                };
                if sp.is_zero() || sp.is_one() {
                    continue;
                }
                let nterms = sp.terms().count();
                let mut factors = Vec::new();
                for i in 0..80u16 {
                    if Poly::var(Var::k(i)).divides(&sp) {
                        factors.push(format!("k{}", i));
                    }
                    let mut h1 = Poly::var(Var::k(i));
                    h1.add_assign(&Poly::one());
                    if h1.divides(&sp) {
                        factors.push(format!("k{}+1", i));
                    }
                }
                println!(
                    "cube {:?} R{}: {} terms deg {:?} factors {:?} ({} ms)",
                    cube,
                    rounds,
                    nterms,
                    sp.degree(),
                    factors,
                    t0.elapsed().as_millis()
                );
            }
        }
    }
}
