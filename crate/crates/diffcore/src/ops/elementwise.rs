use std::rc::Rc;

use super::same_shape;
use crate::error::Result;
use crate::{Scalar, Tensor, Var};

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

impl<'t, T: Scalar> Var<'t, T> {
    fn check_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape(), other.tape()),
            "variables live on different tapes"
        );
    }

    /// Elementwise op whose derivative depends only on the input `x` and the
    /// output `y`.
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let y_saved = Rc::clone(&y);
        self.tape().push(
            op,
            y,
            &[self],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y_saved.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("add", a.shape(), b.shape())?;
        let y = Rc::new(zip_map(&a, &b, |x, y| x + y));
        self.tape().push(
            "add",
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("sub", a.shape(), b.shape())?;
        let y = Rc::new(zip_map(&a, &b, |x, y| x - y));
        self.tape().push(
            "sub",
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("mul", a.shape(), b.shape())?;
        let y = Rc::new(zip_map(&a, &b, |x, y| x * y));
        self.tape().push(
            "mul",
            y,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| zip_map(g, &b, |g, b| g * b)),
                    needs[1].then(|| zip_map(g, &a, |g, a| g * a)),
                ]
            }),
        )
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("div", a.shape(), b.shape())?;
        let y = Rc::new(zip_map(&a, &b, |x, y| x / y));
        let y_saved = Rc::clone(&y);
        self.tape().push(
            "div",
            y,
            &[self, other],
            Box::new(move |g, needs| {
                vec![
                    needs[0].then(|| zip_map(g, &b, |g, b| g / b)),
                    needs[1].then(|| {
                        let gy = zip_map(g, &y_saved, |g, y| g * y);
                        zip_map(&gy, &b, |gy, b| -gy / b)
                    }),
                ]
            }),
        )
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary("mul_scalar", move |x| x * c, move |_, _| c)
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.mul_scalar(-T::one())
    }

    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sqr(self) -> Result<Var<'t, T>> {
        self.unary("sqr", |x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Result<Var<'t, T>> {
        self.unary("sqrt", |x| x.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        self.unary("ln", |x| x.ln(), |x, _| x.recip())
    }

    pub fn powf(self, p: T) -> Result<Var<'t, T>> {
        self.unary("powf", move |x| x.powf(p), move |x, _| p * x.powf(p - T::one()))
    }

    pub fn sin(self) -> Result<Var<'t, T>> {
        self.unary("sin", |x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(self) -> Result<Var<'t, T>> {
        self.unary("cos", |x| x.cos(), |x, _| -x.sin())
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(
            "sigmoid",
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary("relu", |x| x.max(T::zero()), |x, _| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// `max(x, lo)`; the gradient is zero where the clamp is active.
    pub fn clamp_min(self, lo: T) -> Result<Var<'t, T>> {
        self.unary("clamp_min", move |x| x.max(lo), move |x, _| {
            if x > lo {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        let k = T::of((2.0 / std::f64::consts::PI).sqrt());
        let c = T::of(0.044715);
        let half = T::of(0.5);
        let three = T::of(3.0);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (k * (x + c * x * x * x)).tanh()),
            move |x, _| {
                let th = (k * (x + c * x * x * x)).tanh();
                half * (T::one() + th)
                    + half * x * (T::one() - th * th) * k * (T::one() + three * c * x * x)
            },
        )
    }
}
