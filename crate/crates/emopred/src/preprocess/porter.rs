//! The Porter stemming algorithm (1980), in the form made canonical by its
//! reference C implementation: suffixes are stripped in five ordered steps
//! gated on the "measure" of the remaining stem. Two well-known departures
//! of the reference implementation from the original paper are kept here so
//! the output matches the published reference vocabulary exactly:
//! `bli -> ble` (instead of `abli -> able`) and the extra rule
//! `logi -> log`. Words of one or two letters are returned unchanged.
//!
//! The algorithm is defined over lowercase ASCII; anything else passes
//! through untouched. Porter gives no idempotency guarantee — a stem fed
//! back in may be stripped further — so callers must not assume
//! stem(stem(w)) = stem(w).

/// Stem a single lowercase ASCII word. Total: non-ASCII or non-lowercase
/// input is returned as-is.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer {
        b: word.as_bytes().to_vec(),
        k: word.len() as isize - 1,
        j: 0,
    };
    s.step1ab();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5();
    String::from_utf8(s.b[..=s.k as usize].to_vec()).expect("ASCII in, ASCII out")
}

/// Working buffer. `k` is the index of the last live byte; `j` marks the
/// end of the candidate stem set by the most recent successful suffix
/// match. Signed indices keep the empty-stem case (`j = -1`) representable.
struct Stemmer {
    b: Vec<u8>,
    k: isize,
    j: isize,
}

impl Stemmer {
    fn at(&self, i: isize) -> u8 {
        self.b[i as usize]
    }

    /// Is b[i] a consonant? `y` counts as a consonant at the start of the
    /// word or after a vowel, and as a vowel after a consonant.
    fn is_cons(&self, i: isize) -> bool {
        match self.at(i) {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_cons(i - 1),
            _ => true,
        }
    }

    /// The measure m of the stem b[0..=j]: the number of vowel-consonant
    /// sequences in the pattern [C](VC)^m[V].
    fn m(&self) -> usize {
        let mut n = 0;
        let mut i = 0isize;
        loop {
            if i > self.j {
                return n;
            }
            if !self.is_cons(i) {
                break;
            }
            i += 1;
        }
        i += 1;
        loop {
            loop {
                if i > self.j {
                    return n;
                }
                if self.is_cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
            n += 1;
            loop {
                if i > self.j {
                    return n;
                }
                if !self.is_cons(i) {
                    break;
                }
                i += 1;
            }
            i += 1;
        }
    }

    fn vowel_in_stem(&self) -> bool {
        (0..=self.j).any(|i| !self.is_cons(i))
    }

    /// Does b end (at i) with a double consonant?
    fn double_c(&self, i: isize) -> bool {
        i >= 1 && self.at(i) == self.at(i - 1) && self.is_cons(i)
    }

    /// consonant-vowel-consonant ending at i, where the final consonant is
    /// not w, x, or y; signals a short stem like "hop" that restores an e.
    fn cvc(&self, i: isize) -> bool {
        if i < 2 || !self.is_cons(i) || self.is_cons(i - 1) || !self.is_cons(i - 2) {
            return false;
        }
        !matches!(self.at(i), b'w' | b'x' | b'y')
    }

    /// Does the live word end with `s`? On success, j is set to the last
    /// index of the stem before the suffix.
    fn ends(&mut self, s: &[u8]) -> bool {
        let len = s.len() as isize;
        if len > self.k + 1 {
            return false;
        }
        if &self.b[(self.k + 1 - len) as usize..=self.k as usize] != s {
            return false;
        }
        self.j = self.k - len;
        true
    }

    /// Replace the matched suffix (everything after j) with `s`.
    fn set_to(&mut self, s: &[u8]) {
        self.b.truncate((self.j + 1) as usize);
        self.b.extend_from_slice(s);
        self.k = self.j + s.len() as isize;
    }

    /// set_to, but only when the stem has positive measure.
    fn replace(&mut self, s: &[u8]) {
        if self.m() > 0 {
            self.set_to(s);
        }
    }

    /// Plurals and -ed/-ing: caresses -> caress, ponies -> poni,
    /// agreed -> agree, motoring -> motor, hopping -> hop, filing -> file.
    fn step1ab(&mut self) {
        if self.at(self.k) == b's' {
            if self.ends(b"sses") {
                self.k -= 2;
            } else if self.ends(b"ies") {
                self.set_to(b"i");
            } else if self.at(self.k - 1) != b's' {
                self.k -= 1;
            }
        }
        if self.ends(b"eed") {
            if self.m() > 0 {
                self.k -= 1;
            }
        } else if (self.ends(b"ed") || self.ends(b"ing")) && self.vowel_in_stem() {
            self.k = self.j;
            if self.ends(b"at") {
                self.set_to(b"ate");
            } else if self.ends(b"bl") {
                self.set_to(b"ble");
            } else if self.ends(b"iz") {
                self.set_to(b"ize");
            } else if self.double_c(self.k) {
                self.k -= 1;
                if matches!(self.at(self.k), b'l' | b's' | b'z') {
                    self.k += 1;
                }
            } else if self.m() == 1 && self.cvc(self.k) {
                self.j = self.k;
                self.set_to(b"e");
            }
        }
    }

    /// Terminal y -> i when the stem holds a vowel: happy -> happi, but
    /// sky -> sky.
    fn step1c(&mut self) {
        if self.ends(b"y") && self.vowel_in_stem() {
            self.b[self.k as usize] = b'i';
        }
    }

    /// Double suffixes to single ones: -ization -> -ize, -ousness -> -ous.
    /// Dispatch on the penultimate letter; within a group the longest
    /// suffix is tried first and a match ends the step whether or not the
    /// measure condition lets it rewrite.
    fn step2(&mut self) {
        if self.k == 0 {
            return;
        }
        match self.at(self.k - 1) {
            b'a' => {
                if self.ends(b"ational") {
                    self.replace(b"ate");
                } else if self.ends(b"tional") {
                    self.replace(b"tion");
                }
            }
            b'c' => {
                if self.ends(b"enci") {
                    self.replace(b"ence");
                } else if self.ends(b"anci") {
                    self.replace(b"ance");
                }
            }
            b'e' => {
                if self.ends(b"izer") {
                    self.replace(b"ize");
                }
            }
            b'l' => {
                if self.ends(b"bli") {
                    self.replace(b"ble");
                } else if self.ends(b"alli") {
                    self.replace(b"al");
                } else if self.ends(b"entli") {
                    self.replace(b"ent");
                } else if self.ends(b"eli") {
                    self.replace(b"e");
                } else if self.ends(b"ousli") {
                    self.replace(b"ous");
                }
            }
            b'o' => {
                if self.ends(b"ization") {
                    self.replace(b"ize");
                } else if self.ends(b"ation") {
                    self.replace(b"ate");
                } else if self.ends(b"ator") {
                    self.replace(b"ate");
                }
            }
            b's' => {
                if self.ends(b"alism") {
                    self.replace(b"al");
                } else if self.ends(b"iveness") {
                    self.replace(b"ive");
                } else if self.ends(b"fulness") {
                    self.replace(b"ful");
                } else if self.ends(b"ousness") {
                    self.replace(b"ous");
                }
            }
            b't' => {
                if self.ends(b"aliti") {
                    self.replace(b"al");
                } else if self.ends(b"iviti") {
                    self.replace(b"ive");
                } else if self.ends(b"biliti") {
                    self.replace(b"ble");
                }
            }
            b'g' => {
                if self.ends(b"logi") {
                    self.replace(b"log");
                }
            }
            _ => {}
        }
    }

    /// -ic-, -full, -ness and friends: electriciti -> electric,
    /// hopeful -> hope.
    fn step3(&mut self) {
        match self.at(self.k) {
            b'e' => {
                if self.ends(b"icate") {
                    self.replace(b"ic");
                } else if self.ends(b"ative") {
                    self.replace(b"");
                } else if self.ends(b"alize") {
                    self.replace(b"al");
                }
            }
            b'i' => {
                if self.ends(b"iciti") {
                    self.replace(b"ic");
                }
            }
            b'l' => {
                if self.ends(b"ical") {
                    self.replace(b"ic");
                } else if self.ends(b"ful") {
                    self.replace(b"");
                }
            }
            b's' => {
                if self.ends(b"ness") {
                    self.replace(b"");
                }
            }
            _ => {}
        }
    }

    /// Drop -ant, -ence, etc. when the stem's measure exceeds one.
    fn step4(&mut self) {
        if self.k == 0 {
            return;
        }
        let matched = match self.at(self.k - 1) {
            b'a' => self.ends(b"al"),
            b'c' => self.ends(b"ance") || self.ends(b"ence"),
            b'e' => self.ends(b"er"),
            b'i' => self.ends(b"ic"),
            b'l' => self.ends(b"able") || self.ends(b"ible"),
            b'n' => {
                self.ends(b"ant")
                    || self.ends(b"ement")
                    || self.ends(b"ment")
                    || self.ends(b"ent")
            }
            b'o' => {
                (self.ends(b"ion") && self.j >= 0 && matches!(self.at(self.j), b's' | b't'))
                    || self.ends(b"ou")
            }
            b's' => self.ends(b"ism"),
            b't' => self.ends(b"ate") || self.ends(b"iti"),
            b'u' => self.ends(b"ous"),
            b'v' => self.ends(b"ive"),
            b'z' => self.ends(b"ize"),
            _ => false,
        };
        if matched && self.m() > 1 {
            self.k = self.j;
        }
    }

    /// Tidy a final -e and -ll: probate -> probat, controll -> control.
    fn step5(&mut self) {
        self.j = self.k;
        if self.at(self.k) == b'e' {
            let a = self.m();
            if a > 1 || (a == 1 && !self.cvc(self.k - 1)) {
                self.k -= 1;
            }
        }
        if self.at(self.k) == b'l' && self.double_c(self.k) && self.m() > 1 {
            self.k -= 1;
        }
    }
}
