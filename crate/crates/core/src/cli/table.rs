use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Distribution, UniformAxis, UniformGrid};

/// CSV text: one `# key=value, ...` header line, a column line `s_1[,s_2],P`,
/// then one row per grid node with 17 significant digits.
pub fn format_distribution(dist: &Distribution, meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    let header: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(out, "# {}", header.join(", "));
    let cols: Vec<String> = (1..=dist.dims()).map(|i| format!("s_{i}")).collect();
    let _ = writeln!(out, "{},P", cols.join(","));
    for (k, p) in dist.density.iter().enumerate() {
        for x in dist.grid.point(k) {
            let _ = write!(out, "{x:.16e},");
        }
        let _ = writeln!(out, "{p:.16e}");
    }
    out
}

pub fn write_distribution(path: &Path, dist: &Distribution, meta: &[(&str, String)]) -> Result<()> {
    std::fs::write(path, format_distribution(dist, meta))?;
    Ok(())
}

/// Header metadata of a distribution file.
pub fn parse_header(text: &str) -> Vec<(String, String)> {
    text.lines()
        .find_map(|l| l.strip_prefix('#'))
        .map(|h| {
            h.split(',')
                .filter_map(|kv| kv.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect()
        })
        .unwrap_or_default()
}

fn parse_error(context: &str, message: String) -> Error {
    Error::Parse {
        context: context.into(),
        message,
    }
}

fn axis_from_values(values: &[f64], context: &str, column: usize) -> Result<UniformAxis> {
    let n = values.len();
    if n < 2 {
        return Err(parse_error(context, format!("column s_{} needs at least two distinct nodes", column + 1)));
    }
    let start = values[0];
    let step = (values[n - 1] - start) / (n - 1) as f64;
    for (k, &x) in values.iter().enumerate() {
        let expected = start + step * k as f64;
        if (x - expected).abs() > 1e-9 * step.abs().max(x.abs()).max(1.0) || !(step > 0.0) {
            return Err(parse_error(context, format!("column s_{} is not a uniform increasing grid", column + 1)));
        }
    }
    Ok(UniformAxis { start, step, points: n })
}

pub fn parse_distribution(text: &str, context: &str) -> Result<Distribution> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, columns) = lines.next().ok_or_else(|| parse_error(context, "missing column line".into()))?;
    let names: Vec<&str> = columns.split(',').map(str::trim).collect();
    let dims = names.len().saturating_sub(1);
    if !(1..=2).contains(&dims) || names.last() != Some(&"P") {
        return Err(parse_error(context, format!("expected columns s_1[,s_2],P, found {columns:?}")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in lines {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_error(context, format!("line {}: {e}", line_no + 1)))?;
        if row.len() != dims + 1 {
            return Err(parse_error(context, format!("line {}: expected {} fields", line_no + 1, dims + 1)));
        }
        rows.push(row);
    }
    let axes = if dims == 1 {
        let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        vec![axis_from_values(&xs, context, 0)?]
    } else {
        let inner = rows.iter().take_while(|r| r[0] == rows[0][0]).count();
        if inner == 0 || rows.len() % inner != 0 {
            return Err(parse_error(context, "rows do not form a product grid".into()));
        }
        let outer: Vec<f64> = rows.iter().step_by(inner).map(|r| r[0]).collect();
        let second: Vec<f64> = rows[..inner].iter().map(|r| r[1]).collect();
        vec![axis_from_values(&outer, context, 0)?, axis_from_values(&second, context, 1)?]
    };
    let grid = UniformGrid::new(axes);
    if grid.len() != rows.len() {
        return Err(parse_error(context, "rows do not form a product grid".into()));
    }
    for (k, row) in rows.iter().enumerate() {
        let p = grid.point(k);
        if p.iter().zip(row).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0)) {
            return Err(parse_error(context, format!("row {k} is out of grid order")));
        }
    }
    Distribution::new(grid, rows.iter().map(|r| r[dims]).collect())
}

pub fn read_distribution(path: &Path) -> Result<Distribution> {
    let text = std::fs::read_to_string(path)?;
    parse_distribution(&text, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Moments {
    pub fn of(dist: &Distribution) -> Self {
        let cov = dist.covariance();
        Self {
            mean: dist.mean(),
            variance: (0..dist.dims()).map(|i| cov[i][i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub l1: f64,
    pub ks: f64,
    pub first: Moments,
    pub second: Moments,
    /// Nodes of the common grid per axis.
    pub common_points: Vec<usize>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.10e}")).collect::<Vec<_>>().join(" ");
        format!(
            "L1 = {:.10e}\nKS = {:.10e}\nmean_a = {}\nvar_a = {}\nmean_b = {}\nvar_b = {}\n",
            self.l1,
            self.ks,
            fmt(&self.first.mean),
            fmt(&self.first.variance),
            fmt(&self.second.mean),
            fmt(&self.second.variance)
        )
    }
}

/// Multilinear interpolation of `dist` at `s`; zero outside its grid.
pub fn interpolate(dist: &Distribution, s: &[f64]) -> f64 {
    let grid = &dist.grid;
    let mut base = Vec::with_capacity(s.len());
    let mut frac = Vec::with_capacity(s.len());
    for (axis, &x) in grid.axes.iter().zip(s) {
        let u = (x - axis.start) / axis.step;
        let tol = 1e-9;
        if u < -tol || u > (axis.points - 1) as f64 + tol {
            return 0.0;
        }
        let k = (u.floor().max(0.0) as usize).min(axis.points - 2);
        base.push(k);
        frac.push((u - k as f64).clamp(0.0, 1.0));
    }
    let dims = s.len();
    let mut acc = 0.0;
    for corner in 0..(1usize << dims) {
        let mut w = 1.0;
        let mut idx = Vec::with_capacity(dims);
        for d in 0..dims {
            let up = (corner >> d) & 1 == 1;
            w *= if up { frac[d] } else { 1.0 - frac[d] };
            idx.push(base[d] + usize::from(up));
        }
        if w != 0.0 {
            acc += w * dist.density[grid.flat(&idx)];
        }
    }
    acc
}

/// Nodes of `a` inside the support of `b`, per axis.
fn common_axes(a: &UniformGrid, b: &UniformGrid) -> Result<Vec<UniformAxis>> {
    if a.dims() != b.dims() {
        return Err(Error::IncompatibleGrids(format!("{}-D versus {}-D distributions", a.dims(), b.dims())));
    }
    a.axes
        .iter()
        .zip(&b.axes)
        .map(|(x, y)| {
            let tol = 1e-9 * x.step;
            let lo = y.start.max(x.start);
            let hi = y.end().min(x.end());
            let first = ((lo - x.start - tol) / x.step).ceil().max(0.0) as usize;
            let last = ((hi - x.start + tol) / x.step).floor();
            if !(last >= first as f64 + 1.0) {
                return Err(Error::IncompatibleGrids("supports do not overlap".into()));
            }
            let last = (last as usize).min(x.points - 1);
            Ok(UniformAxis {
                start: x.node(first),
                step: x.step,
                points: last - first + 1,
            })
        })
        .collect()
}

/// Joint CDF normalized by the total, by cumulative node sums.
fn cdf(grid: &UniformGrid, values: &[f64]) -> Vec<f64> {
    let weighted: Vec<f64> = (0..grid.len()).map(|k| values[k] * grid.weight(k)).collect();
    let mut out = weighted.clone();
    // Prefix sums along each axis in turn.
    for d in 0..grid.dims() {
        for k in 0..grid.len() {
            let idx = grid.index(k);
            if idx[d] > 0 {
                let mut prev = idx.clone();
                prev[d] -= 1;
                out[k] += out[grid.flat(&prev)];
            }
        }
    }
    let total = *out.last().unwrap_or(&0.0);
    if total != 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// L1 distance, KS statistic and moments; differing grids are compared on the
/// nodes of `a` inside the support of `b`, with `b` interpolated linearly.
pub fn compare(a: &Distribution, b: &Distribution) -> Result<Comparison> {
    let axes = common_axes(&a.grid, &b.grid)?;
    let grid = UniformGrid::new(axes);
    let pa: Vec<f64> = (0..grid.len()).map(|k| interpolate(a, &grid.point(k))).collect();
    let pb: Vec<f64> = (0..grid.len()).map(|k| interpolate(b, &grid.point(k))).collect();
    let diff: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).collect();
    let (ca, cb) = (cdf(&grid, &pa), cdf(&grid, &pb));
    let ks = ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(Comparison {
        l1: grid.integrate(&diff),
        ks,
        first: Moments::of(a),
        second: Moments::of(b),
        common_points: grid.axes.iter().map(|x| x.points).collect(),
    })
}
