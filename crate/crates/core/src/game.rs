//! NoGo rules engine.
//!
//! NoGo is played on a Go board with Go's adjacency and liberty rules, except
//! that any move which would capture an opponent group or leave the mover's
//! own group without liberties is illegal. There is no pass: a player with no
//! legal move on their turn loses. Since stones are never removed, positions
//! cannot repeat and no ko rule is needed.
//!
//! Boards are at most 9x9, so every point set fits in a `u128` bitboard with
//! point index `row * size + col` (row 0 is the top line).

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_SIZE: usize = 9;
pub const DEFAULT_SIZE: usize = 9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("board size {0} outside supported range 1..=9")]
    InvalidSize(usize),
    #[error("point ({row}, {col}) is off a {size}x{size} board")]
    OutOfBounds { row: usize, col: usize, size: usize },
    #[error("illegal move {0}: point is occupied")]
    Occupied(String),
    #[error("illegal move {0}: suicide")]
    Suicide(String),
    #[error("illegal move {0}: captures an opponent group")]
    Capture(String),
    #[error("invalid position: {0}")]
    InvalidPosition(String),
    #[error("cannot parse {what} from {input:?}")]
    Parse { what: &'static str, input: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Black,
    White,
}

impl Color {
    #[inline]
    pub fn opponent(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }

    #[inline]
    pub(crate) fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Color::Black => 'B',
            Color::White => 'W',
        }
    }
}

impl FromStr for Color {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "b" | "black" => Ok(Color::Black),
            "w" | "white" => Ok(Color::White),
            _ => Err(GameError::Parse { what: "color", input: s.to_string() }),
        }
    }
}

/// Content of a single intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stone {
    Empty,
    Black,
    White,
}

/// A stone placement. NoGo has no pass move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Move {
    pub row: u8,
    pub col: u8,
}

impl Move {
    pub fn new(row: usize, col: usize) -> Move {
        Move { row: row as u8, col: col as u8 }
    }

    #[inline]
    pub fn index(self, size: usize) -> usize {
        self.row as usize * size + self.col as usize
    }

    #[inline]
    pub fn from_index(index: usize, size: usize) -> Move {
        Move::new(index / size, index % size)
    }

    /// GTP coordinate such as `E5`. Column letters skip `I`; row numbers count
    /// from the bottom edge.
    pub fn to_gtp(self, size: usize) -> String {
        const LETTERS: &[u8] = b"ABCDEFGHJKLMNOPQRST";
        format!("{}{}", LETTERS[self.col as usize] as char, size - self.row as usize)
    }

    pub fn from_gtp(text: &str, size: usize) -> Result<Move, GameError> {
        let err = || GameError::Parse { what: "coordinate", input: text.to_string() };
        let text = text.trim();
        let mut chars = text.chars();
        let letter = chars.next().ok_or_else(err)?.to_ascii_uppercase();
        if !letter.is_ascii_uppercase() || letter == 'I' {
            return Err(err());
        }
        let mut col = (letter as u8 - b'A') as usize;
        if letter > 'I' {
            col -= 1;
        }
        let number: usize = chars.as_str().parse().map_err(|_| err())?;
        if number == 0 || number > size || col >= size {
            return Err(err());
        }
        Ok(Move::new(size - number, col))
    }
}

/// Bitboard geometry for one board size.
#[derive(Debug)]
struct Geometry {
    size: usize,
    board: u128,
    not_first_col: u128,
    not_last_col: u128,
}

impl Geometry {
    fn new(size: usize) -> Geometry {
        let mut board = 0u128;
        let mut first = 0u128;
        let mut last = 0u128;
        for r in 0..size {
            for c in 0..size {
                let bit = 1u128 << (r * size + c);
                board |= bit;
                if c == 0 {
                    first |= bit;
                }
                if c == size - 1 {
                    last |= bit;
                }
            }
        }
        Geometry { size, board, not_first_col: board & !first, not_last_col: board & !last }
    }

    /// Points orthogonally adjacent to any point of `set`.
    #[inline]
    fn dilate(&self, set: u128) -> u128 {
        let east = (set & self.not_last_col) << 1;
        let west = (set & self.not_first_col) >> 1;
        let south = set << self.size;
        let north = set >> self.size;
        (east | west | south | north) & self.board
    }

    #[inline]
    fn flood(&self, seed: u128, within: u128) -> u128 {
        let mut group = seed;
        loop {
            let next = (group | self.dilate(group)) & within;
            if next == group {
                return group;
            }
            group = next;
        }
    }
}

struct Zobrist {
    stones: Vec<[u64; 2]>,
    white_to_play: u64,
}

struct Tables {
    geometry: Geometry,
    zobrist: Zobrist,
}

fn tables(size: usize) -> &'static Tables {
    static TABLES: OnceLock<Vec<Tables>> = OnceLock::new();
    let all = TABLES.get_or_init(|| {
        (0..=MAX_SIZE)
            .map(|size| {
                let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f_676f_0000 + size as u64);
                let stones = (0..size * size).map(|_| [rng.gen(), rng.gen()]).collect();
                Tables {
                    geometry: Geometry::new(size.max(1)),
                    zobrist: Zobrist { stones, white_to_play: rng.gen() },
                }
            })
            .collect()
    });
    &all[size]
}

/// Which rule a move breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Occupied,
    Suicide,
    Capture,
}

/// A NoGo position. Cheap to copy; legal-move sets for both colors are cached
/// on construction.
#[derive(Clone, Copy)]
pub struct Position {
    size: u8,
    to_play: Color,
    move_count: u16,
    stones: [u128; 2],
    legal: [u128; 2],
    key: u64,
}

impl PartialEq for Position {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.to_play == other.to_play && self.stones == other.stones
    }
}

impl Eq for Position {}

impl Position {
    pub fn new(size: usize) -> Result<Position, GameError> {
        if size == 0 || size > MAX_SIZE {
            return Err(GameError::InvalidSize(size));
        }
        let mut p = Position {
            size: size as u8,
            to_play: Color::Black,
            move_count: 0,
            stones: [0, 0],
            legal: [0, 0],
            key: 0,
        };
        p.refresh();
        Ok(p)
    }

    /// Builds a position from explicit stone lists. Fails if any group would
    /// have no liberties, which cannot arise in NoGo play.
    pub fn from_stones(
        size: usize,
        black: &[Move],
        white: &[Move],
        to_play: Color,
    ) -> Result<Position, GameError> {
        let mut p = Position::new(size)?;
        for (color, list) in [(Color::Black, black), (Color::White, white)] {
            for &m in list {
                p.check_bounds(m)?;
                let bit = 1u128 << m.index(size);
                if (p.stones[0] | p.stones[1]) & bit != 0 {
                    return Err(GameError::InvalidPosition(format!(
                        "point {} given twice",
                        m.to_gtp(size)
                    )));
                }
                p.stones[color.index()] |= bit;
            }
        }
        p.to_play = to_play;
        p.move_count = (black.len() + white.len()) as u16;
        p.refresh();
        if !p.all_groups_have_liberties() {
            return Err(GameError::InvalidPosition("a group has no liberties".into()));
        }
        Ok(p)
    }

    /// Parses a diagram of `size` rows made of `.`, `X` (black) and `O` (white).
    pub fn from_diagram(rows: &[&str], to_play: Color) -> Result<Position, GameError> {
        let size = rows.len();
        let mut black = Vec::new();
        let mut white = Vec::new();
        for (r, line) in rows.iter().enumerate() {
            let cells: Vec<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
            if cells.len() != size {
                return Err(GameError::Parse { what: "diagram row", input: line.to_string() });
            }
            for (c, ch) in cells.into_iter().enumerate() {
                match ch {
                    'X' | 'x' | 'B' => black.push(Move::new(r, c)),
                    'O' | 'o' | 'W' => white.push(Move::new(r, c)),
                    '.' => {}
                    _ => {
                        return Err(GameError::Parse { what: "diagram row", input: line.to_string() })
                    }
                }
            }
        }
        Position::from_stones(size, &black, &white, to_play)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size as usize
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.size() * self.size()
    }

    #[inline]
    pub fn to_play(&self) -> Color {
        self.to_play
    }

    #[inline]
    pub fn move_count(&self) -> usize {
        self.move_count as usize
    }

    pub fn stone_at(&self, m: Move) -> Stone {
        let bit = 1u128 << m.index(self.size());
        if self.stones[0] & bit != 0 {
            Stone::Black
        } else if self.stones[1] & bit != 0 {
            Stone::White
        } else {
            Stone::Empty
        }
    }

    /// Bitboard of `color`'s stones.
    #[inline]
    pub fn stones(&self, color: Color) -> u128 {
        self.stones[color.index()]
    }

    /// 64-bit Zobrist key over stones and side to move.
    #[inline]
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Key of the position reached by playing point `index`, without building it.
    #[inline]
    pub fn child_key(&self, index: usize) -> u64 {
        let z = &tables(self.size()).zobrist;
        self.key ^ z.stones[index][self.to_play.index()] ^ z.white_to_play
    }

    fn check_bounds(&self, m: Move) -> Result<(), GameError> {
        let size = self.size();
        if m.row as usize >= size || m.col as usize >= size {
            return Err(GameError::OutOfBounds { row: m.row as usize, col: m.col as usize, size });
        }
        Ok(())
    }

    /// Bitboard of points where `color` may legally play.
    #[inline]
    pub fn legal_mask_for(&self, color: Color) -> u128 {
        self.legal[color.index()]
    }

    #[inline]
    pub fn legal_mask(&self) -> u128 {
        self.legal[self.to_play.index()]
    }

    #[inline]
    pub fn is_legal_index(&self, index: usize) -> bool {
        self.legal_mask() >> index & 1 == 1
    }

    pub fn is_legal(&self, m: Move) -> Result<bool, GameError> {
        self.check_bounds(m)?;
        Ok(self.is_legal_index(m.index(self.size())))
    }

    /// The rule `m` breaks for the player to move, if any.
    pub fn violation(&self, m: Move) -> Result<Option<Violation>, GameError> {
        self.check_bounds(m)?;
        let size = self.size();
        let geo = &tables(size).geometry;
        let bit = 1u128 << m.index(size);
        let me = self.to_play.index();
        let occupied = self.stones[0] | self.stones[1];
        if occupied & bit != 0 {
            return Ok(Some(Violation::Occupied));
        }
        let empty = geo.board & !occupied & !bit;
        let own = self.stones[me] | bit;
        let group = geo.flood(bit, own);
        if geo.dilate(group) & empty == 0 {
            return Ok(Some(Violation::Suicide));
        }
        let opp = self.stones[1 - me];
        let mut adjacent_opp = geo.dilate(bit) & opp;
        while adjacent_opp != 0 {
            let g = geo.flood(adjacent_opp & adjacent_opp.wrapping_neg(), opp);
            if geo.dilate(g) & empty == 0 {
                return Ok(Some(Violation::Capture));
            }
            adjacent_opp &= !g;
        }
        Ok(None)
    }

    pub fn legal_moves(&self) -> Vec<Move> {
        let size = self.size();
        BitIter(self.legal_mask()).map(|i| Move::from_index(i, size)).collect()
    }

    pub fn legal_count(&self) -> usize {
        self.legal_mask().count_ones() as usize
    }

    /// Returns the position after `m`; `self` is left untouched.
    pub fn play(&self, m: Move) -> Result<Position, GameError> {
        self.check_bounds(m)?;
        let idx = m.index(self.size());
        if !self.is_legal_index(idx) {
            let text = m.to_gtp(self.size());
            return Err(match self.violation(m)? {
                Some(Violation::Occupied) => GameError::Occupied(text),
                Some(Violation::Suicide) => GameError::Suicide(text),
                _ => GameError::Capture(text),
            });
        }
        let mut next = *self;
        next.play_index_unchecked(idx);
        Ok(next)
    }

    /// In-place play for rollouts. The caller guarantees legality.
    #[inline]
    pub fn play_index_unchecked(&mut self, index: usize) {
        debug_assert!(self.is_legal_index(index));
        let z = &tables(self.size()).zobrist;
        self.key ^= z.stones[index][self.to_play.index()] ^ z.white_to_play;
        self.stones[self.to_play.index()] |= 1u128 << index;
        self.to_play = self.to_play.opponent();
        self.move_count += 1;
        self.refresh_legal();
    }

    /// Winner if the game is over: the opponent of a player with no legal move.
    pub fn winner(&self) -> Option<Color> {
        if self.legal_mask() == 0 {
            Some(self.to_play.opponent())
        } else {
            None
        }
    }

    #[inline]
    pub fn is_terminal(&self) -> bool {
        self.legal_mask() == 0
    }

    /// Same stones, other side to move.
    pub fn with_to_play(&self, color: Color) -> Position {
        let mut p = *self;
        if p.to_play != color {
            p.to_play = color;
            p.key ^= tables(self.size()).zobrist.white_to_play;
        }
        p
    }

    pub fn encode_features(&self) -> FeaturePlanes {
        let points = self.points();
        let me = self.to_play;
        let masks = [
            self.stones(me),
            self.stones(me.opponent()),
            self.legal_mask_for(me),
            self.legal_mask_for(me.opponent()),
        ];
        let mut data = vec![0.0f32; 4 * points];
        for (plane, mask) in masks.into_iter().enumerate() {
            for i in BitIter(mask) {
                data[plane * points + i] = 1.0;
            }
        }
        FeaturePlanes { size: self.size(), data }
    }

    fn refresh(&mut self) {
        let z = &tables(self.size()).zobrist;
        let mut key = 0u64;
        for (c, stones) in self.stones.iter().enumerate() {
            for i in BitIter(*stones) {
                key ^= z.stones[i][c];
            }
        }
        if self.to_play == Color::White {
            key ^= z.white_to_play;
        }
        self.key = key;
        self.refresh_legal();
    }

    fn refresh_legal(&mut self) {
        let geo = &tables(self.size()).geometry;
        let empty = geo.board & !(self.stones[0] | self.stones[1]);
        // Liberties of groups with >= 2 liberties (safe to extend) and of
        // groups in atari (filling that liberty suicides or captures).
        let mut multi = [0u128; 2];
        let mut single = [0u128; 2];
        for c in 0..2 {
            let mut rest = self.stones[c];
            while rest != 0 {
                let group = geo.flood(rest & rest.wrapping_neg(), self.stones[c]);
                let libs = geo.dilate(group) & empty;
                if libs.count_ones() >= 2 {
                    multi[c] |= libs;
                } else {
                    single[c] |= libs;
                }
                rest &= !group;
            }
        }
        let breathing = geo.dilate(empty);
        for c in 0..2 {
            self.legal[c] = empty & (breathing | multi[c]) & !single[1 - c];
        }
    }

    /// Every group keeps at least one liberty (flood-fill check).
    pub fn all_groups_have_liberties(&self) -> bool {
        let geo = &tables(self.size()).geometry;
        let empty = geo.board & !(self.stones[0] | self.stones[1]);
        self.stones.iter().all(|&stones| {
            let mut rest = stones;
            while rest != 0 {
                let group = geo.flood(rest & rest.wrapping_neg(), stones);
                if geo.dilate(group) & empty == 0 {
                    return false;
                }
                rest &= !group;
            }
            true
        })
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Position(size={}, to_play={:?}, moves={})", self.size, self.to_play, self.move_count)?;
        write!(f, "{}", self)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let size = self.size();
        for r in 0..size {
            for c in 0..size {
                let ch = match self.stone_at(Move::new(r, c)) {
                    Stone::Empty => '.',
                    Stone::Black => 'X',
                    Stone::White => 'O',
                };
                write!(f, "{}", ch)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Iterates the set bits of a bitboard, lowest index first.
#[derive(Clone, Copy)]
pub struct BitIter(pub u128);

impl Iterator for BitIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }
}

/// Four binary planes of `size * size` values each, plane-major:
/// own stones, opponent stones, own legal moves, opponent legal moves,
/// all from the perspective of the player to move.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlanes {
    pub size: usize,
    pub data: Vec<f32>,
}

impl FeaturePlanes {
    pub const PLANES: usize = 4;

    pub fn plane(&self, i: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[i * n..(i + 1) * n]
    }

    /// Legal-move mask of the player to move (plane 2).
    pub fn legal(&self) -> impl Iterator<Item = bool> + '_ {
        self.plane(2).iter().map(|&v| v > 0.5)
    }
}

/// A finished (or in-progress) game as a move list, with the textual record
/// format `size;B E5;W D4;...;result=B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameRecord {
    pub size: usize,
    pub moves: Vec<Move>,
    pub winner: Option<Color>,
}

impl GameRecord {
    /// Replays the moves from the empty board.
    pub fn replay(&self) -> Result<Position, GameError> {
        let mut p = Position::new(self.size)?;
        for &m in &self.moves {
            p = p.play(m)?;
        }
        Ok(p)
    }
}

impl fmt::Display for GameRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.size)?;
        let mut color = Color::Black;
        for m in &self.moves {
            write!(f, ";{} {}", color.letter(), m.to_gtp(self.size))?;
            color = color.opponent();
        }
        match self.winner {
            Some(c) => write!(f, ";result={}", c.letter()),
            None => write!(f, ";result=?"),
        }
    }
}

impl FromStr for GameRecord {
    type Err = GameError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let err = || GameError::Parse { what: "game record", input: line.to_string() };
        let mut fields = line.trim().split(';');
        let size: usize = fields.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
        if size == 0 || size > MAX_SIZE {
            return Err(GameError::InvalidSize(size));
        }
        let mut moves = Vec::new();
        let mut winner = None;
        let mut expected = Color::Black;
        for field in fields {
            if let Some(result) = field.strip_prefix("result=") {
                winner = match result {
                    "?" => None,
                    other => Some(other.parse()?),
                };
                continue;
            }
            let (color, coord) = field.split_once(' ').ok_or_else(err)?;
            let color: Color = color.parse()?;
            if color != expected {
                return Err(err());
            }
            moves.push(Move::from_gtp(coord, size)?);
            expected = expected.opponent();
        }
        Ok(GameRecord { size, moves, winner })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(r: usize, c: usize) -> Move {
        Move::new(r, c)
    }

    #[test]
    fn empty_board_all_points_legal() {
        let p = Position::new(9).unwrap();
        assert_eq!(p.legal_moves().len(), 81);
        assert!(p.is_legal(mv(4, 4)).unwrap());
        assert_eq!(p.winner(), None);
    }

    #[test]
    fn out_of_bounds_is_an_error() {
        let p = Position::new(5).unwrap();
        assert!(matches!(p.is_legal(mv(5, 0)), Err(GameError::OutOfBounds { .. })));
        assert!(p.play(mv(0, 7)).is_err());
    }

    #[test]
    fn corner_fill_on_2x2_is_suicide_and_capture() {
        let p = Position::from_stones(2, &[mv(0, 0), mv(0, 1), mv(1, 0)], &[], Color::White).unwrap();
        assert!(!p.is_legal(mv(1, 1)).unwrap());
        assert!(p.legal_moves().is_empty());
        assert_eq!(p.winner(), Some(Color::Black));
        // suicide is detected first
        assert_eq!(p.violation(mv(1, 1)).unwrap(), Some(Violation::Suicide));
    }

    #[test]
    fn lone_center_stone_leaves_all_points_open() {
        let p = Position::from_stones(3, &[mv(1, 1)], &[], Color::White).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                if (r, c) != (1, 1) {
                    assert!(p.is_legal(mv(r, c)).unwrap(), "({r},{c})");
                }
            }
        }
    }

    #[test]
    fn one_by_one_board_is_lost_immediately() {
        let p = Position::new(1).unwrap();
        assert_eq!(p.violation(mv(0, 0)).unwrap(), Some(Violation::Suicide));
        assert_eq!(p.winner(), Some(Color::White));
    }

    #[test]
    fn capture_is_reported() {
        // white at (0,0) in atari; black filling (0,1) would capture
        let p = Position::from_diagram(&["O..", "X..", "..."], Color::Black).unwrap();
        assert_eq!(p.violation(mv(0, 1)).unwrap(), Some(Violation::Capture));
        assert!(matches!(p.play(mv(0, 1)), Err(GameError::Capture(_))));
        assert!(matches!(p.play(mv(0, 0)), Err(GameError::Occupied(_))));
    }

    #[test]
    fn play_has_value_semantics() {
        let p = Position::new(9).unwrap();
        let q = p.play(mv(4, 4)).unwrap();
        assert_eq!(p.stone_at(mv(4, 4)), Stone::Empty);
        assert_eq!(q.stone_at(mv(4, 4)), Stone::Black);
        assert_eq!(q.to_play(), Color::White);
        assert_eq!(q.move_count(), 1);
        assert!(!q.is_legal(mv(4, 4)).unwrap());
    }

    #[test]
    fn transpositions_share_a_key() {
        let p = Position::new(5).unwrap();
        let a = p.play(mv(0, 0)).unwrap().play(mv(4, 4)).unwrap().play(mv(2, 2)).unwrap();
        let b = p.play(mv(2, 2)).unwrap().play(mv(4, 4)).unwrap().play(mv(0, 0)).unwrap();
        assert_eq!(a.key(), b.key());
        let fresh = Position::from_stones(5, &[mv(0, 0), mv(2, 2)], &[mv(4, 4)], Color::White).unwrap();
        assert_eq!(fresh.key(), a.key());
        assert_eq!(fresh, a);
        assert_ne!(a.key(), a.with_to_play(Color::Black).key());
        assert_eq!(p.child_key(mv(2, 2).index(5)), p.play(mv(2, 2)).unwrap().key());
    }

    #[test]
    fn feature_planes_follow_the_mover() {
        let empty = Position::new(5).unwrap().encode_features();
        assert!(empty.plane(0).iter().chain(empty.plane(1)).all(|&v| v == 0.0));
        assert!(empty.plane(2).iter().chain(empty.plane(3)).all(|&v| v == 1.0));

        let p = Position::new(5).unwrap().play(mv(2, 2)).unwrap();
        let f = p.encode_features();
        assert_eq!(f.plane(1).iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(f.plane(1)[12], 1.0);
        assert!(f.plane(0).iter().all(|&v| v == 0.0));
        let legal: Vec<usize> = (0..25).filter(|&i| f.plane(2)[i] == 1.0).collect();
        let expected: Vec<usize> = p.legal_moves().iter().map(|m| m.index(5)).collect();
        assert_eq!(legal, expected);
        let flipped = p.with_to_play(Color::Black);
        let opp: Vec<usize> = (0..25).filter(|&i| f.plane(3)[i] == 1.0).collect();
        let expected: Vec<usize> = flipped.legal_moves().iter().map(|m| m.index(5)).collect();
        assert_eq!(opp, expected);
    }

    #[test]
    fn gtp_coordinates_skip_i() {
        assert_eq!(mv(4, 4).to_gtp(9), "E5");
        assert_eq!(mv(0, 8).to_gtp(9), "J9");
        assert_eq!(Move::from_gtp("J9", 9).unwrap(), mv(0, 8));
        assert_eq!(Move::from_gtp("a1", 9).unwrap(), mv(8, 0));
        assert!(Move::from_gtp("I5", 9).is_err());
        assert!(Move::from_gtp("Z5", 9).is_err());
        assert!(Move::from_gtp("E0", 9).is_err());
        assert!(Move::from_gtp("F1", 5).is_err());
    }

    #[test]
    fn game_record_round_trips_and_replays() {
        let rec: GameRecord = "5;B C3;W A1;B E5;result=B".parse().unwrap();
        assert_eq!(rec.moves.len(), 3);
        assert_eq!(rec.to_string(), "5;B C3;W A1;B E5;result=B");
        let end = rec.replay().unwrap();
        assert_eq!(end.move_count(), 3);
        assert!("5;W C3;result=B".parse::<GameRecord>().is_err());
    }

    #[test]
    fn from_stones_rejects_dead_groups() {
        assert!(Position::from_diagram(&["XO", "O."], Color::Black).is_err());
    }
}
