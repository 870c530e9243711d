//! Nelder-Mead simplex minimisation.

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diameter: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub initial_step: f64,
    pub max_iter: usize,
    /// Stop once every vertex lies within this distance of the best one.
    pub tol: f64,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn eval<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64]) -> f64 {
    let v = f(x);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn lerp(from: &[f64], to: &[f64], t: f64) -> Vec<f64> {
    from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn minimize<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], settings: Settings) -> Minimum {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), eval(&f, start)));
    for i in 0..n {
        let mut x = start.to_vec();
        x[i] += settings.initial_step;
        let v = eval(&f, &x);
        simplex.push((x, v));
    }
    let mut iterations = 0;
    loop {
        // stable sort keeps the earlier vertex first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| distance(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if diameter < settings.tol || iterations >= settings.max_iter {
            let (x, value) = simplex.swap_remove(0);
            return Minimum {
                x,
                value,
                iterations,
                converged: diameter < settings.tol,
                diameter,
            };
        }
        iterations += 1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let (worst, f_worst) = simplex[n].clone();
        let (f_best, f_second) = (simplex[0].1, simplex[n - 1].1);
        let reflected = lerp(&centroid, &worst, -REFLECT);
        let f_reflected = eval(&f, &reflected);
        if f_reflected < f_best {
            let expanded = lerp(&centroid, &worst, -EXPAND);
            let f_expanded = eval(&f, &expanded);
            simplex[n] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < f_second {
            simplex[n] = (reflected, f_reflected);
            continue;
        }
        let (contracted, f_contracted) = if f_reflected < f_worst {
            let c = lerp(&centroid, &reflected, CONTRACT);
            let v = eval(&f, &c);
            (c, v)
        } else {
            let c = lerp(&centroid, &worst, CONTRACT);
            let v = eval(&f, &c);
            (c, v)
        };
        if f_contracted < f_worst.min(f_reflected) {
            simplex[n] = (contracted, f_contracted);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = lerp(&best, &vertex.0, SHRINK);
            let v = eval(&f, &x);
            *vertex = (x, v);
        }
    }
}
