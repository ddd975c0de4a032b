//! Reader and writer for NTU-style `.skeleton` text captures.
//!
//! ```text
//! <frame count>
//! per frame:
//!   <body count>
//!   per body:
//!     <body info line; first field is the tracking id>
//!     <joint count>
//!     per joint: x y z [extra fields ignored]
//! ```

use crate::error::{Error, Result};

use super::sequence::{CaptureInfo, SkeletonSequence};

/// Persons kept per recording.
pub const MAX_PERSONS: usize = 2;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.last = i + 1;
                    if !l.trim().is_empty() {
                        return Ok((i + 1, l.trim()));
                    }
                }
                None => {
                    return Err(Error::Parse {
                        line: self.last + 1,
                        msg: format!("unexpected end of file, expected {what}"),
                    })
                }
            }
        }
    }

    fn count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, text) = self.next(what)?;
        text.split_whitespace()
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .map(|n| (line, n))
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected {what}, found `{text}`"),
            })
    }
}

struct Track {
    id: String,
    frames: Vec<Option<Vec<[f64; 3]>>>,
}

impl Track {
    /// Sum of absolute coordinate changes between consecutive frames in
    /// which the body is present.
    fn motion(&self) -> f64 {
        self.frames
            .windows(2)
            .filter_map(|w| match (&w[0], &w[1]) {
                (Some(a), Some(b)) => Some(
                    a.iter()
                        .zip(b)
                        .map(|(p, q)| (0..3).map(|c| (q[c] - p[c]).abs()).sum::<f64>())
                        .sum::<f64>(),
                ),
                _ => None,
            })
            .sum()
    }
}

/// Parses an NTU-style capture with `joints` joints per body.
///
/// Bodies are matched across frames by their tracking id. When more than
/// [`MAX_PERSONS`] bodies appear, the ones with the largest total motion are
/// kept (ties go to the body seen first).
pub fn parse_skeleton_file(bytes: &[u8], joints: usize) -> Result<SkeletonSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        msg: "invalid UTF-8".into(),
    })?;
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, frames) = lines.count("frame count")?;
    if frames == 0 {
        return Err(Error::Format("capture has zero frames".into()));
    }
    let mut tracks: Vec<Track> = Vec::new();
    for t in 0..frames {
        let (_, bodies) = lines.count("body count")?;
        for b in 0..bodies {
            let (_, info) = lines.next("body info line")?;
            let id = info
                .split_whitespace()
                .next()
                .map_or_else(|| format!("#{b}"), str::to_string);
            let (jline, n) = lines.count("joint count")?;
            if n != joints {
                return Err(Error::Format(format!(
                    "line {jline}: body has {n} joints, expected {joints}"
                )));
            }
            let mut pts = Vec::with_capacity(n);
            for _ in 0..n {
                let (line, jt) = lines.next("joint line")?;
                let mut it = jt.split_whitespace();
                let mut p = [0.0; 3];
                for (c, slot) in p.iter_mut().enumerate() {
                    let tok = it.next().ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("joint line has fewer than 3 fields (missing {})", ["x", "y", "z"][c]),
                    })?;
                    *slot = tok.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("invalid coordinate `{tok}`"),
                    })?;
                }
                pts.push(p);
            }
            let idx = match tracks.iter().position(|tr| tr.id == id) {
                Some(i) => i,
                None => {
                    tracks.push(Track {
                        id,
                        frames: vec![None; frames],
                    });
                    tracks.len() - 1
                }
            };
            tracks[idx].frames[t] = Some(pts);
        }
    }

    let mut order: Vec<(usize, f64)> = tracks.iter().enumerate().map(|(i, tr)| (i, tr.motion())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut seq = SkeletonSequence::zeros(frames, joints, MAX_PERSONS, 0)?;
    for (slot, &(ti, _)) in order.iter().take(MAX_PERSONS).enumerate() {
        for (t, f) in tracks[ti].frames.iter().enumerate() {
            if let Some(pts) = f {
                for (v, p) in pts.iter().enumerate() {
                    seq.set_joint(t, v, slot, *p);
                }
            }
        }
    }
    Ok(seq)
}

/// Writes a sequence in the text format read by [`parse_skeleton_file`].
/// Persons that are all-zero in a frame are omitted from that frame.
pub fn to_skeleton_text(seq: &SkeletonSequence) -> String {
    let mut s = format!("{}\n", seq.frames());
    for t in 0..seq.frames() {
        let present: Vec<usize> = (0..seq.persons())
            .filter(|&m| (0..seq.joints()).any(|v| seq.joint(t, v, m) != [0.0; 3]))
            .collect();
        s.push_str(&format!("{}\n", present.len()));
        for m in present {
            s.push_str(&format!("{} 0 0 0 0 0 0 0 0 0\n{}\n", 72057594037927936u64 + m as u64, seq.joints()));
            for v in 0..seq.joints() {
                let [x, y, z] = seq.joint(t, v, m);
                s.push_str(&format!("{x:?} {y:?} {z:?} 0 0 0 0 0 0 0 0 2\n"));
            }
        }
    }
    s
}

/// Splits an NTU file stem such as `S001C002P003R002A013` into capture info
/// and a zero-based action label.
pub fn parse_ntu_name(stem: &str) -> Option<(CaptureInfo, usize)> {
    let field = |tag: char| -> Option<u32> {
        let i = stem.find(tag)?;
        let digits: String = stem[i + 1..].chars().take_while(char::is_ascii_digit).collect();
        digits.parse().ok()
    };
    let action = field('A')?;
    if action == 0 {
        return None;
    }
    Some((
        CaptureInfo {
            setup_id: field('S')?,
            camera_id: field('C')?,
            subject_id: field('P')?,
        },
        action as usize - 1,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(id: &str, pts: &[[f64; 3]]) -> String {
        let mut s = format!("{id} 0 0 0 0 0 0 0 0 0\n{}\n", pts.len());
        for p in pts {
            s.push_str(&format!("{} {} {} 0.1 0.2 0.3 0.4 0 0 0 0 2\n", p[0], p[1], p[2]));
        }
        s
    }

    #[test]
    fn single_zero_frame() {
        let text = format!("1\n1\n{}", body("1", &[[0.0; 3]; 25]));
        let seq = parse_skeleton_file(text.as_bytes(), 25).unwrap();
        assert_eq!(seq.frames(), 1);
        assert_eq!(seq.persons(), MAX_PERSONS);
        assert!(seq.coords().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn reads_back_coordinates() {
        let mut f0 = [[0.0; 3]; 25];
        let mut f1 = f0;
        f1[0] = [1.0, 0.0, 0.0];
        f0[3] = [0.5, -0.25, 3.0];
        f1[3] = [0.5, -0.25, 3.0];
        let text = format!("2\n1\n{}1\n{}", body("7", &f0), body("7", &f1));
        let seq = parse_skeleton_file(text.as_bytes(), 25).unwrap();
        assert_eq!(seq.get(0, 1, 0, 0), 1.0);
        assert_eq!(seq.get(0, 0, 0, 0), 0.0);
        assert_eq!(seq.joint(0, 3, 0), [0.5, -0.25, 3.0]);
    }

    #[test]
    fn keeps_two_most_active_bodies() {
        // three bodies over two frames with motion 0, 3 and 6
        let still = [[0.0; 3]; 2];
        let a0 = [[0.0; 3]; 2];
        let a1 = [[1.0, 1.0, 1.0], [0.0; 3]];
        let b0 = [[0.0; 3]; 2];
        let b1 = [[2.0, 2.0, 2.0], [0.0; 3]];
        let text = format!(
            "2\n3\n{}{}{}3\n{}{}{}",
            body("s", &still),
            body("a", &a0),
            body("b", &b0),
            body("s", &still),
            body("a", &a1),
            body("b", &b1)
        );
        let seq = parse_skeleton_file(text.as_bytes(), 2).unwrap();
        assert_eq!(seq.persons(), 2);
        assert_eq!(seq.joint(1, 0, 0), [2.0; 3]); // body b, motion 6
        assert_eq!(seq.joint(1, 0, 1), [1.0; 3]); // body a, motion 3
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "1\n1\n1 0 0\n2\n0 0 0\n0 zz 0\n";
        match parse_skeleton_file(text.as_bytes(), 2) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("zz"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_skeleton_file(b"x\n", 2), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn wrong_joint_count_is_format_error() {
        let text = format!("1\n1\n{}", body("1", &[[0.0; 3]; 3]));
        assert!(matches!(parse_skeleton_file(text.as_bytes(), 25), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file() {
        let text = "2\n1\n1 0\n2\n0 0 0\n0 0 0\n";
        assert!(matches!(parse_skeleton_file(text.as_bytes(), 2), Err(Error::Parse { .. })));
    }

    #[test]
    fn writer_round_trips() {
        let mut seq = SkeletonSequence::zeros(3, 2, 2, 0).unwrap();
        seq.set_joint(0, 0, 0, [0.1, 0.2, 1.0 / 3.0]);
        seq.set_joint(2, 1, 0, [-1e-7, 5.5, 2.0]);
        seq.set_joint(1, 1, 1, [3.0, 2.0, 1.0]);
        let back = parse_skeleton_file(to_skeleton_text(&seq).as_bytes(), 2).unwrap();
        assert_eq!(back.coords(), seq.coords());
    }

    #[test]
    fn ntu_names() {
        let (info, label) = parse_ntu_name("S001C002P003R002A013").unwrap();
        assert_eq!((info.setup_id, info.camera_id, info.subject_id, label), (1, 2, 3, 12));
        assert!(parse_ntu_name("garbage").is_none());
    }
}
