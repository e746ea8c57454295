//! Choropleth rendering: per-unit posterior-mean prevalence as a standalone
//! SVG with a fixed [0, 1] color scale, a crude-estimate side panel, and an
//! optional truth-residual column. Also emits the estimated-vs-crude
//! scatter data.

use crate::error::{Error, Result};
use crate::geometry::PolygonSet;

const MAP_SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;
const PANEL_WIDTH: f64 = 260.0;
const BAR_WIDTH: f64 = 24.0;

/// Interpolated five-stop color ramp over [0, 1].
fn ramp(value: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, (u8, u8, u8)); 5] = [
        (0.00, (0x44, 0x01, 0x54)),
        (0.25, (0x3b, 0x52, 0x8b)),
        (0.50, (0x21, 0x91, 0x8c)),
        (0.75, (0x5e, 0xc9, 0x62)),
        (1.00, (0xfd, 0xe7, 0x25)),
    ];
    let v = value.clamp(0.0, 1.0);
    for w in STOPS.windows(2) {
        let (a, ca) = w[0];
        let (b, cb) = w[1];
        if v <= b {
            let t = if b > a { (v - a) / (b - a) } else { 0.0 };
            let mix = |x: u8, y: u8| -> u8 { (x as f64 + t * (y as f64 - x as f64)).round() as u8 };
            return (mix(ca.0, cb.0), mix(ca.1, cb.1), mix(ca.2, cb.2));
        }
    }
    STOPS[4].1
}

fn fill_color(value: f64) -> String {
    let (r, g, b) = ramp(value);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render one boundary system's posterior means as a choropleth.
///
/// `mean`, `crude` and the optional `truth` are aligned with the polygon
/// order. The provenance string lands in a leading XML comment.
pub fn choropleth_svg(
    polygons: &PolygonSet,
    mean: &[f64],
    crude: &[f64],
    truth: Option<&[f64]>,
    title: &str,
    provenance: &str,
) -> Result<String> {
    let k = polygons.k();
    if mean.len() != k || crude.len() != k || truth.map_or(false, |t| t.len() != k) {
        return Err(Error::DimMismatch(format!(
            "{k} polygons but {} means / {} crude values",
            mean.len(),
            crude.len()
        )));
    }

    // Map polygon coordinates into the SVG viewport, y flipped.
    let mut xmin = f64::INFINITY;
    let mut ymin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for p in polygons.polygons() {
        for v in p.ring() {
            xmin = xmin.min(v[0]);
            xmax = xmax.max(v[0]);
            ymin = ymin.min(v[1]);
            ymax = ymax.max(v[1]);
        }
    }
    let scale = (MAP_SIZE / (xmax - xmin)).min(MAP_SIZE / (ymax - ymin));
    let to_px = |v: [f64; 2]| -> (f64, f64) {
        (
            MARGIN + (v[0] - xmin) * scale,
            MARGIN + (ymax - v[1]) * scale,
        )
    };

    let width = MARGIN * 3.0 + MAP_SIZE + BAR_WIDTH + PANEL_WIDTH;
    let height = MARGIN * 2.0 + MAP_SIZE;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!("<!-- {} -->\n", escape_xml(provenance)));
    svg.push_str(&format!("<title>{}</title>\n", escape_xml(title)));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Polygons.
    for (i, poly) in polygons.polygons().iter().enumerate() {
        let pts: Vec<String> = poly.ring()[..poly.ring().len() - 1]
            .iter()
            .map(|&v| {
                let (x, y) = to_px(v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"1\"><title>{}: mean {:.4}</title></polygon>\n",
            pts.join(" "),
            fill_color(mean[i]),
            escape_xml(&polygons.labels()[i]),
            mean[i]
        ));
    }

    // Color bar: discrete stops from bottom (0) to top (1).
    let bar_x = MARGIN * 1.5 + MAP_SIZE;
    let steps = 48;
    let step_h = MAP_SIZE / steps as f64;
    for s in 0..steps {
        let v = (s as f64 + 0.5) / steps as f64;
        let y = MARGIN + MAP_SIZE - (s + 1) as f64 * step_h;
        svg.push_str(&format!(
            "<rect x=\"{bar_x:.1}\" y=\"{y:.2}\" width=\"{BAR_WIDTH}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            step_h + 0.5,
            fill_color(v)
        ));
    }
    for (v, label) in [(0.0, "0.0"), (0.5, "0.5"), (1.0, "1.0")] {
        let y = MARGIN + MAP_SIZE * (1.0 - v);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"monospace\">{label}</text>\n",
            bar_x + BAR_WIDTH + 4.0,
            y + 4.0
        ));
    }

    // Side panel: crude estimates (and truth residuals when available).
    let panel_x = bar_x + BAR_WIDTH + 50.0;
    let header = if truth.is_some() {
        "unit  crude  mean-truth"
    } else {
        "unit  crude"
    };
    svg.push_str(&format!(
        "<text x=\"{panel_x:.1}\" y=\"{:.1}\" font-size=\"13\" font-family=\"monospace\" font-weight=\"bold\">{}</text>\n",
        MARGIN + 12.0,
        escape_xml(header)
    ));
    let row_h = (MAP_SIZE - 30.0) / k.max(1) as f64;
    for i in 0..k {
        let y = MARGIN + 30.0 + (i as f64 + 0.5) * row_h;
        let line = match truth {
            Some(t) => format!(
                "{}  {:.3}  {:+.4}",
                polygons.labels()[i],
                crude[i],
                mean[i] - t[i]
            ),
            None => format!("{}  {:.3}", polygons.labels()[i], crude[i]),
        };
        svg.push_str(&format!(
            "<text x=\"{panel_x:.1}\" y=\"{y:.1}\" font-size=\"12\" font-family=\"monospace\">{}</text>\n",
            escape_xml(&line)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Estimated-vs-crude scatter rows for both boundary systems.
pub fn scatter_csv(
    rows: &[(String, String, f64, f64)], // (system, unit, crude, estimated)
    provenance: &str,
) -> String {
    let mut out = format!("# {provenance}\nsystem,unit,crude,estimated\n");
    for (system, unit, crude, est) in rows {
        out.push_str(&format!("{system},{unit},{crude:?},{est:?}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::rect_tiling;

    #[test]
    fn uniform_values_fill_identically() {
        let set = rect_tiling("t", 2, 2, 1.0, 1.0).unwrap();
        let svg = choropleth_svg(
            &set,
            &[0.5; 4],
            &[0.5; 4],
            None,
            "uniform",
            "config_hash=x root_seed=1",
        )
        .unwrap();
        let fill = fill_color(0.5);
        assert_eq!(svg.matches(&format!("fill=\"{fill}\"")).count() >= 4, true);
        // All four polygons share one fill.
        let polygon_fills: Vec<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<polygon"))
            .collect();
        assert_eq!(polygon_fills.len(), 4);
        assert!(polygon_fills.iter().all(|l| l.contains(&fill)));
    }

    #[test]
    fn svg_is_well_formed_xml() {
        let set = rect_tiling("t", 2, 3, 2.0, 1.0).unwrap();
        let mean = [0.1, 0.3, 0.5, 0.7, 0.9, 0.2];
        let crude = [0.15, 0.25, 0.55, 0.65, 0.85, 0.3];
        let truth = [0.1, 0.3, 0.5, 0.7, 0.9, 0.25];
        let svg = choropleth_svg(&set, &mean, &crude, Some(&truth), "map", "p").unwrap();

        // Minimal well-formedness: every opened tag closes in order.
        let mut stack: Vec<String> = Vec::new();
        let mut rest = svg.as_str();
        while let Some(start) = rest.find('<') {
            rest = &rest[start + 1..];
            let end = rest.find('>').expect("unterminated tag");
            let tag = &rest[..end];
            rest = &rest[end + 1..];
            if tag.starts_with("!--") {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().expect("close without open");
                assert_eq!(open, name, "mismatched close tag");
            } else if !tag.ends_with('/') {
                let name: String = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn mismatched_unit_count_is_an_error() {
        let set = rect_tiling("t", 2, 2, 1.0, 1.0).unwrap();
        assert!(choropleth_svg(&set, &[0.5; 3], &[0.5; 4], None, "t", "p").is_err());
        assert!(choropleth_svg(&set, &[0.5; 4], &[0.5; 4], Some(&[0.5; 2]), "t", "p").is_err());
    }

    #[test]
    fn scatter_has_one_row_per_unit() {
        let rows = vec![
            ("old".to_string(), "a".to_string(), 0.4, 0.45),
            ("new".to_string(), "b".to_string(), 0.5, 0.52),
            ("new".to_string(), "c".to_string(), 0.6, 0.58),
        ];
        let csv = scatter_csv(&rows, "prov");
        assert_eq!(csv.lines().count(), 2 + 3);
        assert!(csv.starts_with("# prov\n"));
    }

    #[test]
    fn ramp_endpoints_and_ordering() {
        assert_eq!(fill_color(0.0), "#440154");
        assert_eq!(fill_color(1.0), "#fde725");
        assert_ne!(fill_color(0.25), fill_color(0.75));
    }
}
