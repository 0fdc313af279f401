//! Standalone SVG rendering of one layout.
//!
//! Output is byte-stable: class colors come from an FNV-1a hash of the class
//! name into a fixed palette, and coordinates are printed with two decimals.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::ingest::Corpus;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn class_color(name: &str) -> &'static str {
    PALETTE[(fnv1a(name.as_bytes()) % PALETTE.len() as u64) as usize]
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders layout `layout_id` of `corpus`; components are drawn in corpus order.
pub fn render_svg(corpus: &Corpus, layout_id: &str) -> Result<String> {
    let layout = corpus
        .layout(layout_id)
        .ok_or_else(|| Error::Invalid(format!("unknown layout id {layout_id:?}")))?;
    let (w, h) = (layout.width, layout.height);
    let mut svg = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.2}" height="{h:.2}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(svg, "  <title>{}</title>", escape(&layout.id));
    let _ = writeln!(
        svg,
        r##"  <rect x="0.00" y="0.00" width="{w:.2}" height="{h:.2}" fill="#ffffff" stroke="#000000" stroke-width="1"/>"##
    );
    for comp in &layout.components {
        let name = corpus.vocabulary.name(comp.class_id).unwrap_or("?");
        let color = class_color(name);
        let b = comp.bbox;
        let label = match comp.score {
            Some(s) => format!("{} {:.2}", escape(name), s),
            None => escape(name),
        };
        let _ = writeln!(svg, "  <g>");
        let _ = writeln!(
            svg,
            r#"    <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            b.x1,
            b.y1,
            b.width(),
            b.height()
        );
        let _ = writeln!(
            svg,
            r#"    <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{color}">{label}</text>"#,
            b.x1 + 2.0,
            b.y1 + 11.0
        );
        let _ = writeln!(svg, "  </g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
