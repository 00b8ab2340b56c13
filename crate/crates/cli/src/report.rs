//! Text rendering of a confusion matrix: true labels down the rows,
//! predictions across the columns.

use cortexdec_core::training::Metrics;

pub fn render(names: &[String], metrics: &Metrics, percent: bool) -> String {
    let header = "true \\ pred";
    let label_w = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max(header.len());
    let cells: Vec<Vec<String>> = metrics
        .confusion
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter()
                .map(|&c| {
                    if percent {
                        let p = if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 };
                        format!("{p:.2}")
                    } else {
                        c.to_string()
                    }
                })
                .collect()
        })
        .collect();
    let col_w: Vec<usize> = names
        .iter()
        .enumerate()
        .map(|(j, n)| {
            cells
                .iter()
                .map(|r| r[j].len())
                .max()
                .unwrap_or(0)
                .max(n.chars().count())
        })
        .collect();

    let mut out = String::new();
    out.push_str(&format!("{header:<label_w$}"));
    for (n, w) in names.iter().zip(&col_w) {
        out.push_str(&format!("  {n:>w$}"));
    }
    out.push('\n');
    for (name, row) in names.iter().zip(&cells) {
        out.push_str(&format!("{name:<label_w$}"));
        for (c, w) in row.iter().zip(&col_w) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
    }
    let [a, p, r, f] = metrics.summary_percent();
    out.push_str(&format!(
        "\naccuracy {a}%  macro precision {p}%  macro recall {r}%  macro F1 {f}%\n"
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        cortexdec_core::ClassVocabulary::default().names().to_vec()
    }

    fn column_of(line: &str, header: &str, col_name: &str) -> Option<usize> {
        // Right-aligned columns: a cell ends where its header name ends.
        let end = header.find(&format!("  {col_name}"))? + 2 + col_name.len();
        let cell_end = line[..end].trim_end().len();
        (cell_end == end).then_some(end)
    }

    #[test]
    fn single_off_diagonal_lands_in_its_row_and_column() {
        let mut c = vec![vec![0u64; 13]; 13];
        c[2][5] = 1;
        let m = Metrics::from_confusion(c).unwrap();
        let text = render(&names(), &m, false);
        let lines: Vec<&str> = text.lines().collect();
        let row = lines.iter().find(|l| l.starts_with("hello ")).unwrap();
        assert_eq!(row.split_whitespace().filter(|&v| v == "1").count(), 1);
        let end = column_of(row, lines[0], "pain").unwrap();
        assert_eq!(&row[end - 1..end], "1");
        for l in &lines[1..14] {
            if !l.starts_with("hello ") {
                assert!(l[11..].split_whitespace().all(|v| v == "0"), "{l}");
            }
        }
    }

    #[test]
    fn identity_and_percentages() {
        let mut c = vec![vec![0u64; 13]; 13];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 3;
        }
        c[0][1] = 1;
        let m = Metrics::from_confusion(c).unwrap();
        let text = render(&names(), &m, true);
        let row = text.lines().find(|l| l.starts_with("ambulance")).unwrap();
        let sum: f64 = row[11..]
            .split_whitespace()
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert!((sum - 100.0).abs() <= 0.01);
    }
}
