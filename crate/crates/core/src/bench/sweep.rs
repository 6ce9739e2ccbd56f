use serde::Serialize;

use super::report::Scorecard;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: i64,
    pub mean_plot_score: Option<f64>,
    pub executable_rate: f64,
    pub calls_per_row: f64,
    pub items: usize,
}

impl From<&Scorecard> for SweepRow {
    fn from(card: &Scorecard) -> Self {
        Self {
            k: card.k,
            mean_plot_score: card.mean_plot_score(),
            executable_rate: card.executable_rate(),
            calls_per_row: card.calls_per_row(),
            items: card.items.len(),
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Line chart of plot score and executable rate against k, both on a
/// 0-100 axis.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (k_min, k_max) = rows.iter().fold((i64::MAX, i64::MIN), |(lo, hi), r| (lo.min(r.k), hi.max(r.k)));
    let span = (k_max - k_min).max(1) as f64;
    let x = |k: i64| LEFT + (k - k_min.min(k_max)) as f64 / span * (W - LEFT - RIGHT);
    let y = |v: f64| TOP + (1.0 - v.clamp(0.0, 100.0) / 100.0) * (H - TOP - BOTTOM);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">Effect of the number of reasoning paths</text>\n",
        (W - RIGHT + LEFT) / 2.0
    );
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        svg.push_str(&format!(
            "<line x1=\"{LEFT}\" y1=\"{ty:.1}\" x2=\"{:.1}\" y2=\"{ty:.1}\" stroke=\"#ddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{tick}</text>\n",
            W - RIGHT,
            LEFT - 6.0,
            ty + 4.0
        ));
    }
    for r in rows {
        svg.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n", x(r.k), H - BOTTOM + 18.0, r.k));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">K</text>\n",
        (W - RIGHT + LEFT) / 2.0,
        H - 12.0
    ));

    type Series = (&'static str, &'static str, fn(&SweepRow) -> Option<f64>);
    let series: [Series; 2] = [
        ("Plot Score", "#1f77b4", |r| r.mean_plot_score),
        ("Executable Rate (%)", "#d62728", |r| Some(r.executable_rate)),
    ];
    for (i, (name, color, value)) in series.iter().enumerate() {
        let points: Vec<String> = rows.iter().filter_map(|r| value(r).map(|v| format!("{:.1},{:.1}", x(r.k), y(v)))).collect();
        if !points.is_empty() {
            svg.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", points.join(" ")));
            for p in &points {
                let (px, py) = p.split_once(',').expect("point");
                svg.push_str(&format!("<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\"/>\n"));
            }
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n<text x=\"{:.1}\" y=\"{:.1}\">{name}</text>\n",
            W - RIGHT + 12.0,
            W - RIGHT + 32.0,
            W - RIGHT + 38.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
