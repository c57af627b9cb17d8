//! OFF mesh reader.
//!
//! Accepts the common dialect family: an optional `OFF` header (possibly
//! fused with the counts, `OFF 8 6 0`), a `V F E` counts line, `V` vertex
//! lines, and `F` polygon lines whose first token is the vertex count.
//! Polygons with more than three vertices are fan-triangulated. Blank lines
//! and `#` comments are skipped. Errors carry the 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use pointgcn_core::pointcloud::{Point3, TriangleMesh};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OffError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> OffError {
    OffError::Parse { line, message: message.into() }
}

/// Read a mesh from an OFF file.
pub fn read_off(path: impl AsRef<Path>) -> Result<TriangleMesh, OffError> {
    parse_off(BufReader::new(File::open(path)?))
}

/// Parse OFF content from any buffered reader.
pub fn parse_off<R: BufRead>(reader: R) -> Result<TriangleMesh, OffError> {
    // Significant tokens only, each tagged with its source line.
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("");
        for tok in content.split_whitespace() {
            tokens.push((idx + 1, tok.to_string()));
        }
    }
    let mut pos = 0usize;
    if tokens.is_empty() {
        return Err(parse_err(1, "empty file"));
    }
    if tokens[0].1.eq_ignore_ascii_case("OFF") {
        pos = 1;
    }

    let take_count = |pos: &mut usize, what: &str| -> Result<usize, OffError> {
        let (line, tok) = tokens
            .get(*pos)
            .ok_or_else(|| parse_err(tokens.last().map_or(1, |t| t.0), format!("missing {what}")))?;
        let v = tok
            .parse::<usize>()
            .map_err(|_| parse_err(*line, format!("malformed {what} `{tok}`")))?;
        *pos += 1;
        Ok(v)
    };
    let n_vertices = take_count(&mut pos, "vertex count")?;
    let n_faces = take_count(&mut pos, "face count")?;
    let _n_edges = take_count(&mut pos, "edge count")?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for v in 0..n_vertices {
        let mut coords = [0.0f32; 3];
        for coord in coords.iter_mut() {
            let (line, tok) = tokens
                .get(pos)
                .ok_or_else(|| {
                    parse_err(tokens.last().map_or(1, |t| t.0), format!("vertex {v} truncated"))
                })?;
            *coord = tok
                .parse::<f32>()
                .map_err(|_| parse_err(*line, format!("malformed coordinate `{tok}`")))?;
            pos += 1;
        }
        vertices.push(Point3::new(coords[0], coords[1], coords[2]));
    }

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(n_faces);
    for f in 0..n_faces {
        let (count_line, count_tok) = tokens
            .get(pos)
            .ok_or_else(|| parse_err(tokens.last().map_or(1, |t| t.0), format!("face {f} missing")))?;
        let m = count_tok
            .parse::<usize>()
            .map_err(|_| parse_err(*count_line, format!("malformed face size `{count_tok}`")))?;
        pos += 1;
        if m < 3 {
            return Err(parse_err(*count_line, format!("face {f} has {m} vertices")));
        }
        let mut poly = Vec::with_capacity(m);
        for _ in 0..m {
            let (line, tok) = tokens
                .get(pos)
                .ok_or_else(|| parse_err(*count_line, format!("face {f} truncated")))?;
            let idx = tok
                .parse::<usize>()
                .map_err(|_| parse_err(*line, format!("malformed face index `{tok}`")))?;
            if idx >= n_vertices {
                return Err(parse_err(
                    *line,
                    format!("face index {idx} out of range (mesh has {n_vertices} vertices)"),
                ));
            }
            poly.push(idx);
            pos += 1;
        }
        for i in 1..m - 1 {
            faces.push([poly[0], poly[i], poly[i + 1]]);
        }
    }

    TriangleMesh::new(vertices, faces)
        .map_err(|e| parse_err(1, format!("inconsistent mesh: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<TriangleMesh, OffError> {
        parse_off(s.as_bytes())
    }

    #[test]
    fn minimal_mesh() {
        let mesh = parse("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn header_fused_with_counts() {
        let mesh = parse("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces.len(), 1);
    }

    #[test]
    fn missing_header_is_fine() {
        let mesh = parse("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(mesh.vertices.len(), 3);
    }

    #[test]
    fn quad_faces_fan_triangulate() {
        let mesh =
            parse("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n").unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_names_line() {
        let err = parse("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n").unwrap_err();
        match err {
            OffError::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_counts_rejected() {
        let err = parse("OFF\nthree 1 0\n").unwrap_err();
        match err {
            OffError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let mesh = parse("# exported\nOFF\n\n3 1 0  # counts\n0 0 0\n1 0 0\n0 1 0\n\n3 0 1 2\n")
            .unwrap();
        assert_eq!(mesh.vertices.len(), 3);
    }

    #[test]
    fn truncated_file_reports_error() {
        assert!(parse("OFF\n3 1 0\n0 0 0\n1 0 0\n").is_err());
    }
}
