use ndarray::Array2;

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            m.zip_mut_with(g, |m, g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, m, v| {
                *p -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Array2::from_elem((1, 2), 1.0);
        let mut opt = Adam::new(0.01, &[(1, 2)]);
        opt.update(vec![&mut p], &[ndarray::array![[3.0, -0.5]]]);
        assert!((p[[0, 0]] - 0.99).abs() < 1e-9);
        assert!((p[[0, 1]] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Array2::from_elem((1, 1), 5.0);
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = p.mapv(|x| 2.0 * (x - 2.0));
            opt.update(vec![&mut p], &[g]);
        }
        assert!((p[[0, 0]] - 2.0).abs() < 1e-2);
    }
}
