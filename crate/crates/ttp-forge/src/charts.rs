use std::fmt::Write;

const PALETTE: [&str; 7] =
    ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2", "#edc948"];

/// Small-multiples bar chart of rank counts, one panel per heuristic,
/// shared y scale. `bins[h][r]` counts how often heuristic `h` landed on
/// rank `r + 1`.
pub fn rank_chart(names: &[&str], bins: &[Vec<u64>]) -> String {
    assert_eq!(names.len(), bins.len());
    let n_ranks = bins.first().map(|b| b.len()).unwrap_or(0);
    let max_count = bins.iter().flatten().copied().max().unwrap_or(0).max(1);

    let cols = names.len().min(4).max(1);
    let rows = names.len().div_ceil(cols);
    let panel_w = 230.0;
    let panel_h = 170.0;
    let margin = 24.0;
    let width = cols as f64 * panel_w + margin * 2.0;
    let height = rows as f64 * panel_h + margin * 2.0;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = write!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n");

    for (h, name) in names.iter().enumerate() {
        let px = margin + (h % cols) as f64 * panel_w;
        let py = margin + (h / cols) as f64 * panel_h;
        let plot_x = px + 28.0;
        let plot_y = py + 22.0;
        let plot_w = panel_w - 48.0;
        let plot_h = panel_h - 58.0;
        let color = PALETTE[h % PALETTE.len()];

        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n",
            px + panel_w / 2.0,
            py + 14.0,
            name
        );
        let _ = write!(
            svg,
            "<line x1=\"{plot_x}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#555\"/>\n",
            plot_y + plot_h,
            plot_x + plot_w,
            plot_y + plot_h
        );

        let slot = plot_w / n_ranks.max(1) as f64;
        for (r, &count) in bins[h].iter().enumerate() {
            let bar_w = slot * 0.7;
            let bar_h = plot_h * count as f64 / max_count as f64;
            let x = plot_x + r as f64 * slot + (slot - bar_w) / 2.0;
            let y = plot_y + plot_h - bar_h;
            let _ = write!(
                svg,
                "<rect class=\"bar\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" \
                 height=\"{bar_h:.1}\" fill=\"{color}\"/>\n"
            );
            if count > 0 {
                let _ = write!(
                    svg,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#333\">{}</text>\n",
                    x + bar_w / 2.0,
                    y - 3.0,
                    count
                );
            }
            let _ = write!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#555\">{}</text>\n",
                x + bar_w / 2.0,
                plot_y + plot_h + 13.0,
                r + 1
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#555\">rank</text>\n",
            plot_x + plot_w / 2.0,
            plot_y + plot_h + 28.0
        );
    }

    svg.push_str("</svg>\n");
    svg
}
