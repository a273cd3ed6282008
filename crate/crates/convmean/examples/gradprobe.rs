use convmean::data;
use convmean::model::{self, CmParams, Variant};
use convmean::tensor::{Kernel4, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
struct T64 {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl T64 {
    fn from_tensor(t: &Tensor3) -> T64 {
        T64 {
            h: t.height(),
            w: t.width(),
            c: t.channels(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, y: isize, x: isize, c: usize) -> f64 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0.0
        } else {
            self.data[(y as usize * self.w + x as usize) * self.c + c]
        }
    }
}

struct K64 {
    kh: usize,
    kw: usize,
    cin: usize,
    cout: usize,
    w: Vec<f64>,
}

impl K64 {
    fn from_kernel(k: &Kernel4) -> K64 {
        K64 {
            kh: k.kh(),
            kw: k.kw(),
            cin: k.cin(),
            cout: k.cout(),
            w: k.weights().iter().map(|&v| v as f64).collect(),
        }
    }

    fn at(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f64 {
        self.w[((ky * self.kw + kx) * self.cin + ci) * self.cout + co]
    }
}

fn conv64(input: &T64, k: &K64, pad: usize) -> T64 {
    let out_h = input.h + 2 * pad - k.kh + 1;
    let out_w = input.w + 2 * pad - k.kw + 1;
    let mut out = T64 { h: out_h, w: out_w, c: k.cout, data: vec![0.0; out_h * out_w * k.cout] };
    for oy in 0..out_h {
        for ox in 0..out_w {
            for co in 0..k.cout {
                let mut sum = 0.0;
                for ky in 0..k.kh {
                    for kx in 0..k.kw {
                        for ci in 0..k.cin {
                            let iy = oy as isize + ky as isize - pad as isize;
                            let ix = ox as isize + kx as isize - pad as isize;
                            sum += input.at(iy, ix, ci) * k.at(ky, kx, ci, co);
                        }
                    }
                }
                out.data[(oy * out_w + ox) * k.cout + co] = sum;
            }
        }
    }
    out
}

fn pool64(input: &T64) -> T64 {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = T64 { h: oh, w: ow, c: input.c, data: vec![0.0; oh * ow * input.c] };
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..input.c {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = input.at((2 * y + dy) as isize, (2 * x + dx) as isize, c);
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.data[(y * ow + x) * input.c + c] = best;
            }
        }
    }
    out
}

fn relu64(input: &T64) -> T64 {
    T64 {
        h: input.h,
        w: input.w,
        c: input.c,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

fn gap64(input: &T64) -> [f64; 3] {
    assert_eq!(input.c, 3);
    let mut sums = [0.0; 3];
    for px in input.data.chunks_exact(3) {
        for c in 0..3 {
            sums[c] += px[c];
        }
    }
    sums.map(|s| s / (input.h * input.w) as f64)
}

fn l2norm64(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-9 {
        let g = 1.0 / 3.0f64.sqrt();
        [g, g, g]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

/// Reference forward pass of the network in 64-bit.
fn forward64(params: &CmParams, input: &T64) -> [f64; 3] {
    let pools = params.variant() != Variant::NoMaxPool;
    let rectifies = params.variant() != Variant::NoRelu;
    let stage = |t: &T64, k: &K64| -> T64 {
        let z = conv64(t, k, (k.kh - 1) / 2);
        let p = if pools { pool64(&z) } else { z };
        if rectifies {
            relu64(&p)
        } else {
            p
        }
    };
    let mut t = stage(input, &K64::from_kernel(params.f1()));
    if let Some(f2) = params.f2() {
        t = stage(&t, &K64::from_kernel(f2));
    }
    let z3 = conv64(&t, &K64::from_kernel(params.f3()), 0);
    l2norm64(gap64(&relu64(&z3)))
}


fn main() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 400);
        let params = CmParams::init_kaiming(seed, Variant::Cm);
        let data_v: Vec<f32> = (0..32 * 48 * 3).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let raw = Tensor3::from_vec(32, 48, 3, data_v).unwrap();
        let input = data::max_normalize(&raw).unwrap();
        let probe: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0f32..1.0));

        let fwd = model::forward(&params, &input).unwrap();
        let grads = model::backward(&params, &fwd.cache, probe).unwrap();
        let analytic: Vec<f32> = grads.flat_iter().collect();
        let input64 = T64::from_tensor(&input);
        let loss = |p: &CmParams| -> f64 {
            let e = forward64(p, &input64);
            e[0] * probe[0] as f64 + e[1] * probe[1] as f64 + e[2] * probe[2] as f64
        };
        let shifted = |i: usize, d: f64| -> f64 {
            let mut q = params.clone();
            let b = params.flat_iter().nth(i).unwrap() as f64;
            *q.flat_iter_mut().nth(i).unwrap() = (b + d) as f32;
            loss(&q)
        };
        for i in 0..params.param_count() {
            let a = analytic[i] as f64;
            let fd4 = (shifted(i, 1e-4) - shifted(i, -1e-4)) / 2e-4;
            let rel4 = (a - fd4).abs() / a.abs().max(fd4.abs()).max(1e-4);
            if rel4 > 1e-3 {
                let fd5 = (shifted(i, 1e-5) - shifted(i, -1e-5)) / 2e-5;
                let rel5 = (a - fd5).abs() / a.abs().max(fd5.abs()).max(1e-4);
                let fd6 = (shifted(i, 1e-6) - shifted(i, -1e-6)) / 2e-6;
                let rel6 = (a - fd6).abs() / a.abs().max(fd6.abs()).max(1e-4);
                if rel5 > 1e-3 && rel6 > 1e-3 {
                    let c = shifted(i, 0.0);
                    let os_r = (shifted(i, 1e-5) - c) / 1e-5;
                    let os_l = (c - shifted(i, -1e-5)) / 1e-5;
                    println!("seed {seed} param {i}: a {a:.8e}");
                    println!("  fd4 {fd4:.8e} rel {rel4:.2e} | fd5 {fd5:.8e} rel {rel5:.2e} | fd6 {fd6:.8e} rel {rel6:.2e}");
                    println!("  one-sided right {os_r:.8e} left {os_l:.8e}");
                }
            }
        }
    }
}
