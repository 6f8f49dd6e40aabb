use std::fmt;
use std::str::FromStr;

/// Per-frame needle-tip state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum NeedleState {
    NoNeedle,
    Fist,
    Infil,
}

impl NeedleState {
    pub const COUNT: usize = 3;
    pub const ALL: [NeedleState; 3] = [NeedleState::NoNeedle, NeedleState::Fist, NeedleState::Infil];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            NeedleState::NoNeedle => "NoNeedle",
            NeedleState::Fist => "Fist",
            NeedleState::Infil => "Infil",
        }
    }

    /// Legal frame-to-frame change: self, NoNeedle↔Fist or Fist↔Infil.
    pub fn can_follow(self, previous: NeedleState) -> bool {
        !matches!(
            (previous, self),
            (NeedleState::NoNeedle, NeedleState::Infil) | (NeedleState::Infil, NeedleState::NoNeedle)
        )
    }

    /// Index of the most probable class; ties go to the lower index.
    pub fn argmax<T: PartialOrd + Copy>(probs: &[T]) -> NeedleState {
        let mut best = 0;
        for (i, p) in probs.iter().enumerate().take(Self::COUNT) {
            if *p > probs[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for NeedleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseStateError(pub String);

impl fmt::Display for ParseStateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown needle state {:?}", self.0)
    }
}

impl std::error::Error for ParseStateError {}

impl FromStr for NeedleState {
    type Err = ParseStateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "NoNeedle" | "N" | "0" => Ok(NeedleState::NoNeedle),
            "Fist" | "F" | "1" => Ok(NeedleState::Fist),
            "Infil" | "I" | "2" => Ok(NeedleState::Infil),
            other => Err(ParseStateError(other.to_string())),
        }
    }
}

/// First illegal transition in a label sequence, as `(index, from, to)`.
pub fn first_grammar_violation(labels: &[NeedleState]) -> Option<(usize, NeedleState, NeedleState)> {
    labels
        .windows(2)
        .enumerate()
        .find(|(_, w)| !w[1].can_follow(w[0]))
        .map(|(i, w)| (i + 1, w[0], w[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Depth {
    Front,
    Middle,
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lateral {
    Left,
    Center,
    Right,
}

/// One of the nine insertion areas, depth letter then lateral letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    FL,
    FC,
    FR,
    ML,
    MC,
    MR,
    BL,
    BC,
    BR,
}

impl Section {
    pub const ALL: [Section; 9] = [
        Section::FL,
        Section::FC,
        Section::FR,
        Section::ML,
        Section::MC,
        Section::MR,
        Section::BL,
        Section::BC,
        Section::BR,
    ];

    pub fn depth(self) -> Depth {
        match self {
            Section::FL | Section::FC | Section::FR => Depth::Front,
            Section::ML | Section::MC | Section::MR => Depth::Middle,
            Section::BL | Section::BC | Section::BR => Depth::Back,
        }
    }

    pub fn lateral(self) -> Lateral {
        match self {
            Section::FL | Section::ML | Section::BL => Lateral::Left,
            Section::FC | Section::MC | Section::BC => Lateral::Center,
            Section::FR | Section::MR | Section::BR => Lateral::Right,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Section::FL => "FL",
            Section::FC => "FC",
            Section::FR => "FR",
            Section::ML => "ML",
            Section::MC => "MC",
            Section::MR => "MR",
            Section::BL => "BL",
            Section::BC => "BC",
            Section::BR => "BR",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Section::ALL
            .into_iter()
            .find(|sec| sec.code() == s.trim())
            .ok_or_else(|| format!("unknown section {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::NeedleState::*;
    use super::*;

    #[test]
    fn adjacency_rule() {
        assert!(Fist.can_follow(NoNeedle));
        assert!(Infil.can_follow(Fist));
        assert!(NoNeedle.can_follow(Fist));
        assert!(!Infil.can_follow(NoNeedle));
        assert!(!NoNeedle.can_follow(Infil));
        for s in NeedleState::ALL {
            assert!(s.can_follow(s));
        }
    }

    #[test]
    fn violation_reports_frame_index() {
        let labels = [NoNeedle, NoNeedle, Fist, NoNeedle, Infil];
        assert_eq!(first_grammar_violation(&labels), Some((4, NoNeedle, Infil)));
        assert_eq!(first_grammar_violation(&labels[..4]), None);
    }

    #[test]
    fn parse_round_trip() {
        for s in NeedleState::ALL {
            assert_eq!(s.name().parse::<NeedleState>().unwrap(), s);
        }
        for sec in Section::ALL {
            assert_eq!(sec.code().parse::<Section>().unwrap(), sec);
        }
        assert!("Needle".parse::<NeedleState>().is_err());
    }

    #[test]
    fn section_axes() {
        assert_eq!(Section::BL.depth(), Depth::Back);
        assert_eq!(Section::BL.lateral(), Lateral::Left);
        assert_eq!(Section::MC.depth(), Depth::Middle);
        assert_eq!(Section::FR.lateral(), Lateral::Right);
    }

    #[test]
    fn argmax_prefers_first_on_tie() {
        assert_eq!(NeedleState::argmax(&[0.2, 0.4, 0.4]), Fist);
        assert_eq!(NeedleState::argmax(&[0.1f32, 0.1, 0.8]), Infil);
    }
}
