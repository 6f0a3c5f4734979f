//! Referring queries: the attribute grammar, its semantics, token encoding,
//! and the text renderer/parser.

use super::{Color, SceneSpec, ShapeKind};
use crate::error::NumericsError;
use crate::tensor::{Real, Tape, Var};

/// Token slots per query (fixed padding length).
pub const COND_SLOTS: usize = 8;
/// Embedding-table vocabulary size; ids above the used range stay reserved.
pub const VOCAB_SIZE: usize = 32;

const PAD_TOKEN: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparative {
    Smaller,
    Bigger,
    Faster,
    Slower,
}

impl Comparative {
    pub const ALL: [Comparative; 4] = [
        Comparative::Smaller,
        Comparative::Bigger,
        Comparative::Faster,
        Comparative::Slower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Comparative::Smaller => "smaller",
            Comparative::Bigger => "bigger",
            Comparative::Faster => "faster",
            Comparative::Slower => "slower",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// A structured referring expression. The tuple resolves to exactly one track
/// in its scene; [`QuerySpec::resolve`] is the defining semantics.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuerySpec {
    pub kind: ShapeKind,
    pub comparative: Option<Comparative>,
    pub color: Option<Color>,
    pub direction: Option<Direction>,
}

impl QuerySpec {
    /// The unique referent under the grammar's semantics, if one exists.
    ///
    /// Candidates are the tracks matching kind, color, and direction. Without
    /// a comparative the candidate must be unique; with one, the candidate
    /// set needs at least two members and a strict extreme of size or speed.
    pub fn resolve(&self, scene: &SceneSpec) -> Option<usize> {
        let candidates: Vec<usize> = scene
            .tracks
            .iter()
            .enumerate()
            .filter(|(_, tr)| {
                tr.kind == self.kind
                    && self.color.map_or(true, |c| tr.color == c)
                    && self.direction.map_or(true, |d| tr.direction() == Some(d))
            })
            .map(|(i, _)| i)
            .collect();

        match self.comparative {
            None => match candidates[..] {
                [only] => Some(only),
                _ => None,
            },
            Some(comp) => {
                if candidates.len() < 2 {
                    return None;
                }
                let keyed: Vec<(usize, f64)> = candidates
                    .iter()
                    .map(|&i| {
                        let tr = &scene.tracks[i];
                        let key = match comp {
                            Comparative::Smaller | Comparative::Bigger => tr.size as f64,
                            Comparative::Faster | Comparative::Slower => tr.speed(),
                        };
                        (i, key)
                    })
                    .collect();
                let pick_max = matches!(comp, Comparative::Bigger | Comparative::Faster);
                let best = keyed
                    .iter()
                    .copied()
                    .reduce(|a, b| {
                        let a_wins = if pick_max { a.1 >= b.1 } else { a.1 <= b.1 };
                        if a_wins { a } else { b }
                    })
                    .unwrap();
                // A tie means no unique referent.
                let strict = keyed.iter().filter(|&&(i, k)| i != best.0 && k == best.1).count() == 0;
                strict.then_some(best.0)
            }
        }
    }

    /// Token ids: `[comparative?, color?, kind, direction?]` padded to
    /// [`COND_SLOTS`]. A deterministic function of the attribute tuple.
    pub fn token_ids(&self) -> [u32; COND_SLOTS] {
        let mut ids = [PAD_TOKEN; COND_SLOTS];
        let mut at = 0;
        if let Some(c) = self.comparative {
            ids[at] = 4 + c as u32;
            at += 1;
        }
        if let Some(c) = self.color {
            ids[at] = 8 + c as u32;
            at += 1;
        }
        ids[at] = 1 + self.kind as u32;
        at += 1;
        if let Some(d) = self.direction {
            ids[at] = 14 + d as u32;
        }
        ids
    }

    /// English rendering, e.g. "the smaller red circle moving left".
    pub fn text(&self) -> String {
        let mut out = String::from("the");
        if let Some(c) = self.comparative {
            out.push(' ');
            out.push_str(c.name());
        }
        if let Some(c) = self.color {
            out.push(' ');
            out.push_str(c.name());
        }
        out.push(' ');
        out.push_str(self.kind.name());
        if let Some(d) = self.direction {
            out.push_str(" moving ");
            out.push_str(d.name());
        }
        out
    }

    /// Parses either the tuple form `kind=circle,comparative=smaller,...` or
    /// the exact rendered-text form produced by [`QuerySpec::text`].
    pub fn parse(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.contains('=') {
            Self::parse_tuple(s)
        } else {
            Self::parse_text(s)
        }
    }

    fn parse_tuple(s: &str) -> Result<Self, String> {
        let mut kind = None;
        let mut comparative = None;
        let mut color = None;
        let mut direction = None;
        for field in s.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {field:?}"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kind" => {
                    kind = Some(
                        ShapeKind::from_name(value)
                            .ok_or_else(|| format!("unknown kind {value:?}"))?,
                    )
                }
                "comparative" => {
                    comparative = match value {
                        "none" => None,
                        v => Some(
                            Comparative::from_name(v)
                                .ok_or_else(|| format!("unknown comparative {v:?}"))?,
                        ),
                    }
                }
                "color" => {
                    color = match value {
                        "none" => None,
                        v => Some(
                            Color::from_name(v).ok_or_else(|| format!("unknown color {v:?}"))?,
                        ),
                    }
                }
                "direction" => {
                    direction = match value {
                        "none" => None,
                        v => Some(
                            Direction::from_name(v)
                                .ok_or_else(|| format!("unknown direction {v:?}"))?,
                        ),
                    }
                }
                other => return Err(format!("unknown attribute {other:?}")),
            }
        }
        let kind = kind.ok_or_else(|| "missing kind".to_string())?;
        Ok(QuerySpec { kind, comparative, color, direction })
    }

    fn parse_text(s: &str) -> Result<Self, String> {
        let mut words = s.split_whitespace().peekable();
        if words.next() != Some("the") {
            return Err(format!("query text must start with \"the\": {s:?}"));
        }
        let mut comparative = None;
        let mut color = None;
        if let Some(&w) = words.peek() {
            if let Some(c) = Comparative::from_name(w) {
                comparative = Some(c);
                words.next();
            }
        }
        if let Some(&w) = words.peek() {
            if let Some(c) = Color::from_name(w) {
                color = Some(c);
                words.next();
            }
        }
        let kind_word = words.next().ok_or_else(|| "missing shape kind".to_string())?;
        let kind =
            ShapeKind::from_name(kind_word).ok_or_else(|| format!("unknown kind {kind_word:?}"))?;
        let direction = match words.next() {
            None => None,
            Some("moving") => {
                let d = words.next().ok_or_else(|| "missing direction".to_string())?;
                Some(Direction::from_name(d).ok_or_else(|| format!("unknown direction {d:?}"))?)
            }
            Some(other) => return Err(format!("unexpected word {other:?}")),
        };
        if words.next().is_some() {
            return Err(format!("trailing words in {s:?}"));
        }
        Ok(QuerySpec { kind, comparative, color, direction })
    }

    /// Human-readable list of valid attributes, for CLI error messages.
    pub fn grammar_help() -> String {
        format!(
            "kind={} comparative=none|{} color=none|{} direction=none|{}",
            ShapeKind::ALL.map(|k| k.name()).join("|"),
            Comparative::ALL.map(|c| c.name()).join("|"),
            Color::ALL.map(|c| c.name()).join("|"),
            Direction::ALL.map(|d| d.name()).join("|"),
        )
    }
}

/// Looks up the condition embedding: row i of the result is the table row for
/// token i, padded slots share the learned pad row. Output is `[K, D]`.
pub fn embed_query<T: Real>(
    tape: &mut Tape<T>,
    table: Var,
    query: &QuerySpec,
) -> Result<Var, NumericsError> {
    tape.embedding(table, &query.token_ids())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::movingshapes::ShapeTrack;
    use crate::tensor::Tensor;

    fn track(kind: ShapeKind, color: Color, size: u32, vel: [f64; 2]) -> ShapeTrack {
        ShapeTrack { kind, color, size, pos: [16.0, 16.0], vel }
    }

    fn scene(tracks: Vec<ShapeTrack>) -> SceneSpec {
        SceneSpec { frames: 8, height: 32, width: 32, tracks, seed: 0 }
    }

    #[test]
    fn comparative_resolution_picks_strict_extreme() {
        let sc = scene(vec![
            track(ShapeKind::Circle, Color::Red, 4, [1.0, 0.0]),
            track(ShapeKind::Circle, Color::Blue, 7, [0.0, 2.0]),
            track(ShapeKind::Square, Color::Green, 5, [1.0, 1.0]),
        ]);
        let q = |comparative| QuerySpec {
            kind: ShapeKind::Circle,
            comparative: Some(comparative),
            color: None,
            direction: None,
        };
        assert_eq!(q(Comparative::Smaller).resolve(&sc), Some(0));
        assert_eq!(q(Comparative::Bigger).resolve(&sc), Some(1));
        assert_eq!(q(Comparative::Faster).resolve(&sc), Some(1));
        assert_eq!(q(Comparative::Slower).resolve(&sc), Some(0));
    }

    #[test]
    fn ties_and_missing_candidates_resolve_to_none() {
        let sc = scene(vec![
            track(ShapeKind::Circle, Color::Red, 4, [1.0, 0.0]),
            track(ShapeKind::Circle, Color::Blue, 4, [0.0, 1.0]),
        ]);
        let tie = QuerySpec {
            kind: ShapeKind::Circle,
            comparative: Some(Comparative::Smaller),
            color: None,
            direction: None,
        };
        assert_eq!(tie.resolve(&sc), None);
        let missing = QuerySpec {
            kind: ShapeKind::Triangle,
            comparative: None,
            color: None,
            direction: None,
        };
        assert_eq!(missing.resolve(&sc), None);
        // plain kind query is ambiguous with two circles
        let ambiguous = QuerySpec {
            kind: ShapeKind::Circle,
            comparative: None,
            color: None,
            direction: None,
        };
        assert_eq!(ambiguous.resolve(&sc), None);
    }

    #[test]
    fn direction_filter_applies() {
        let sc = scene(vec![
            track(ShapeKind::Square, Color::Red, 4, [-2.0, 0.5]),
            track(ShapeKind::Square, Color::Red, 5, [2.0, -0.5]),
        ]);
        let q = QuerySpec {
            kind: ShapeKind::Square,
            comparative: None,
            color: None,
            direction: Some(Direction::Left),
        };
        assert_eq!(q.resolve(&sc), Some(0));
    }

    #[test]
    fn token_ids_deterministic_and_distinct() {
        let base = QuerySpec {
            kind: ShapeKind::Circle,
            comparative: Some(Comparative::Smaller),
            color: None,
            direction: None,
        };
        assert_eq!(base.token_ids(), base.clone().token_ids());
        let other = QuerySpec { comparative: Some(Comparative::Bigger), ..base.clone() };
        assert_ne!(base.token_ids(), other.token_ids());
        assert_eq!(base.token_ids().len(), COND_SLOTS);
        assert!(base.token_ids().iter().all(|&id| (id as usize) < VOCAB_SIZE));
    }

    #[test]
    fn text_roundtrip() {
        let q = QuerySpec {
            kind: ShapeKind::Triangle,
            comparative: Some(Comparative::Faster),
            color: Some(Color::Magenta),
            direction: Some(Direction::Down),
        };
        assert_eq!(q.text(), "the faster magenta triangle moving down");
        assert_eq!(QuerySpec::parse(&q.text()).unwrap(), q);
        assert_eq!(
            QuerySpec::parse("kind=triangle,comparative=faster,color=magenta,direction=down")
                .unwrap(),
            q
        );
        assert_eq!(
            QuerySpec::parse("kind=circle,comparative=smaller").unwrap(),
            QuerySpec {
                kind: ShapeKind::Circle,
                comparative: Some(Comparative::Smaller),
                color: None,
                direction: None
            }
        );
        assert!(QuerySpec::parse("kind=blob").is_err());
        assert!(QuerySpec::parse("the purple dodecahedron").is_err());
    }

    #[test]
    fn embedding_rows_follow_tokens() {
        let mut tape = Tape::<f32>::new();
        let table_data: Vec<f32> = (0..VOCAB_SIZE * 4).map(|i| i as f32).collect();
        let table = tape
            .leaf(Tensor::from_vec(&[VOCAB_SIZE, 4], table_data), false)
            .unwrap();
        let q = QuerySpec {
            kind: ShapeKind::Circle,
            comparative: None,
            color: None,
            direction: None,
        };
        let emb = embed_query(&mut tape, table, &q).unwrap();
        assert_eq!(tape.dims(emb), &[COND_SLOTS, 4]);
        // first row = kind token (id 1), remaining rows = pad row (id 0)
        let v = tape.value(emb).data();
        assert_eq!(&v[0..4], &[4.0, 5.0, 6.0, 7.0]);
        for slot in 1..COND_SLOTS {
            assert_eq!(&v[slot * 4..slot * 4 + 4], &[0.0, 1.0, 2.0, 3.0]);
        }
    }
}
