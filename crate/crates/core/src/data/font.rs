//! 5×7 bitmap glyphs for `a–z` and `0–9` (drawn as capitals for legibility).

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;
/// Blank columns between adjacent glyphs.
pub const GLYPH_SPACING: usize = 1;

const GLYPHS: [(char, [&str; 7]); 36] = [
    ('a', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('b', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('c', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('d', ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."]),
    ('e', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('f', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('g', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('h', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('i', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('l', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('m', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('n', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"]),
    ('o', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('p', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('r', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('s', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('t', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('u', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('v', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
];

/// Ink mask of `c` (case-insensitive), row-major 7×5; `None` for characters
/// without a glyph.
pub fn glyph(c: char) -> Option<[[bool; GLYPH_WIDTH]; GLYPH_HEIGHT]> {
    let c = c.to_ascii_lowercase();
    let rows = GLYPHS.iter().find(|(g, _)| *g == c)?.1;
    let mut mask = [[false; GLYPH_WIDTH]; GLYPH_HEIGHT];
    for (r, row) in rows.iter().enumerate() {
        for (col, ch) in row.chars().enumerate() {
            mask[r][col] = ch == '#';
        }
    }
    Some(mask)
}

/// Pixel width of `len` glyphs at unit scale.
pub fn text_width(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        len * (GLYPH_WIDTH + GLYPH_SPACING) - GLYPH_SPACING
    }
}
