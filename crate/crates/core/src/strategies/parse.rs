//! Parser for the strategy mini-language.
//!
//! ```text
//! strategy := name [ '(' args ')' ]
//!           | 'discrete' '[' phase ( '->' phase )* ']'
//!           | 'anneal' '[' strategy '->' strategy ';' 'lambda' '=' lambda ']'
//! phase    := strategy [ '@' ( 'round' | 'acc' ) '<' number ]
//! args     := arg ( ',' arg )*          arg := [ key '=' ] number
//! lambda   := 'linear' '(' from ',' to ',' rounds ')' | 'const' '(' x ')'
//! ```
//!
//! Names: `fedavg`, `fedworse`, `fedbetter`, `fedworse_k(k)`, `fedbetter_k(k)`,
//! `fedsoftworse(T)`, `fedsoftbetter(T)`, and the named discrete hybrids
//! `fed<X>avg` / `fedavg<X>` for `X ∈ {worse, better, softworse, softbetter}`
//! (switch at round `switch`, default 20) plus `fedsoftbetteravgsoftworse`
//! (switches at `switch` and `switch2`, defaults 20 and 40).

use std::fmt;

use super::{LambdaSchedule, Phase, Strategy, Trigger, DEFAULT_SWITCH_ROUND, DEFAULT_TEMPERATURE};

/// Syntax or argument error with its byte offset in the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "strategy parse error at position {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

type PResult<T> = Result<T, ParseError>;

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

struct Arg {
    key: Option<String>,
    value: f64,
    position: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, position: usize, message: impl Into<String>) -> PResult<T> {
        Err(ParseError { position, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> PResult<()> {
        if self.eat(token) {
            Ok(())
        } else {
            let found = self.src[self.pos..].chars().next().map_or("end of input".to_string(), |c| format!("'{c}'"));
            self.err(self.pos, format!("expected '{token}', found {found}"))
        }
    }

    fn ident(&mut self) -> PResult<(String, usize)> {
        self.skip_ws();
        let start = self.pos;
        let len = self.src[start..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.src.len() - start);
        if len == 0 || self.src[start..].starts_with(|c: char| c.is_ascii_digit()) {
            return self.err(start, "expected a name");
        }
        self.pos += len;
        Ok((self.src[start..start + len].to_string(), start))
    }

    fn number(&mut self) -> PResult<(f64, usize)> {
        self.skip_ws();
        let start = self.pos;
        let len = self.src[start..]
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')))
            .unwrap_or(self.src.len() - start);
        let text = &self.src[start..start + len];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos += len;
                Ok((v, start))
            }
            _ => self.err(start, format!("expected a number, found '{text}'")),
        }
    }

    fn args(&mut self) -> PResult<Vec<Arg>> {
        let mut out = Vec::new();
        if !self.eat("(") {
            return Ok(out);
        }
        if self.eat(")") {
            return Ok(out);
        }
        loop {
            self.skip_ws();
            let position = self.pos;
            let key = if self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                let (k, _) = self.ident()?;
                self.expect("=")?;
                Some(k)
            } else {
                None
            };
            let (value, _) = self.number()?;
            out.push(Arg { key, value, position });
            if self.eat(")") {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    fn strategy(&mut self) -> PResult<Strategy> {
        let (name, at) = self.ident()?;
        let lname = name.to_ascii_lowercase();
        match lname.as_str() {
            "discrete" => return self.discrete(),
            "anneal" => return self.anneal(),
            _ => {}
        }
        let args = self.args()?;
        build_named(&lname, at, &args)
    }

    fn discrete(&mut self) -> PResult<Strategy> {
        self.expect("[")?;
        let mut phases = Vec::new();
        loop {
            let start = self.pos;
            let strategy = self.strategy()?;
            let until = if self.eat("@") { Some(self.trigger()?) } else { None };
            if let Some(prev) = phases.last() {
                let prev: &Phase = prev;
                if prev.until.is_none() {
                    return self.err(start, "phase after an untriggered phase is unreachable");
                }
            }
            phases.push(Phase { strategy, until });
            if self.eat("]") {
                return Ok(Strategy::Discrete(phases));
            }
            self.expect("->")?;
        }
    }

    fn trigger(&mut self) -> PResult<Trigger> {
        let (kind, at) = self.ident()?;
        self.expect("<")?;
        let (value, vat) = self.number()?;
        match kind.to_ascii_lowercase().as_str() {
            "round" => {
                if value < 0.0 || value.fract() != 0.0 {
                    return self.err(vat, "round threshold must be a non-negative integer");
                }
                Ok(Trigger::RoundBelow(value as u64))
            }
            "acc" | "accuracy" => {
                if !(0.0..=1.0).contains(&value) {
                    return self.err(vat, "accuracy threshold must be in [0, 1]");
                }
                Ok(Trigger::AccuracyBelow(value))
            }
            other => self.err(at, format!("unknown trigger '{other}', expected 'round' or 'acc'")),
        }
    }

    fn anneal(&mut self) -> PResult<Strategy> {
        self.expect("[")?;
        let base = self.strategy()?;
        self.expect("->")?;
        let target = self.strategy()?;
        self.expect(";")?;
        let (key, kat) = self.ident()?;
        if key != "lambda" {
            return self.err(kat, format!("expected 'lambda', found '{key}'"));
        }
        self.expect("=")?;
        let (kind, at) = self.ident()?;
        let args = self.args()?;
        let lambda = match (kind.as_str(), args.as_slice()) {
            ("linear", [a, b, r]) => {
                if r.value < 0.0 || r.value.fract() != 0.0 {
                    return self.err(r.position, "linear ramp length must be a non-negative integer");
                }
                LambdaSchedule::Linear { from: a.value, to: b.value, rounds: r.value as u64 }
            }
            ("const", [x]) => LambdaSchedule::Constant(x.value),
            ("linear", _) => return self.err(at, "linear takes (from, to, rounds)"),
            ("const", _) => return self.err(at, "const takes one value"),
            _ => return self.err(at, format!("unknown lambda schedule '{kind}'")),
        };
        if lambda.validate().is_err() {
            return self.err(at, "lambda must stay in [0, 1] and be non-decreasing");
        }
        self.expect("]")?;
        Ok(Strategy::Anneal { base: Box::new(base), target: Box::new(target), lambda })
    }
}

/// Look up keyed or positional arguments, rejecting unknown keys.
fn take(args: &[Arg], keys: &[&[&str]], at: usize) -> PResult<Vec<Option<f64>>> {
    let mut out = vec![None; keys.len()];
    for (i, a) in args.iter().enumerate() {
        let slot = match &a.key {
            None if i < keys.len() => i,
            None => return Err(ParseError { position: a.position, message: "too many arguments".into() }),
            Some(k) => keys
                .iter()
                .position(|names| names.contains(&k.as_str()))
                .ok_or_else(|| ParseError { position: a.position, message: format!("unknown argument '{k}'") })?,
        };
        if out[slot].replace(a.value).is_some() {
            return Err(ParseError { position: a.position, message: "argument given twice".into() });
        }
    }
    let _ = at;
    Ok(out)
}

const T_KEYS: &[&str] = &["T", "t", "temperature"];

fn temperature(v: Option<f64>, at: usize) -> PResult<f64> {
    let t = v.unwrap_or(DEFAULT_TEMPERATURE);
    if t > 0.0 {
        Ok(t)
    } else {
        Err(ParseError { position: at, message: format!("temperature must be > 0, got {t}") })
    }
}

fn switch_round(v: Option<f64>, default: u64, at: usize) -> PResult<u64> {
    match v {
        None => Ok(default),
        Some(x) if x >= 0.0 && x.fract() == 0.0 => Ok(x as u64),
        Some(x) => Err(ParseError { position: at, message: format!("switch round must be an integer, got {x}") }),
    }
}

/// Pure strategy for a hybrid component name.
fn component(name: &str, t: f64) -> Option<Strategy> {
    Some(match name {
        "avg" => Strategy::FedAvg,
        "worse" => Strategy::FedWorse,
        "better" => Strategy::FedBetter,
        "softworse" => Strategy::FedSoftWorse { temperature: t },
        "softbetter" => Strategy::FedSoftBetter { temperature: t },
        _ => return None,
    })
}

fn build_named(name: &str, at: usize, args: &[Arg]) -> PResult<Strategy> {
    let no_args = |s: Strategy| {
        if let Some(a) = args.first() {
            Err(ParseError { position: a.position, message: format!("'{name}' takes no arguments") })
        } else {
            Ok(s)
        }
    };
    match name {
        "fedavg" => return no_args(Strategy::FedAvg),
        "fedworse" => return no_args(Strategy::FedWorse),
        "fedbetter" => return no_args(Strategy::FedBetter),
        "fedworse_k" | "fedbetter_k" => {
            let v = take(args, &[&["k"]], at)?;
            let k = v[0].ok_or(ParseError { position: at, message: format!("'{name}' requires k") })?;
            if !(k > 0.0 && k <= 1.0) {
                return Err(ParseError { position: at, message: format!("k must be in (0, 1], got {k}") });
            }
            return Ok(if name == "fedworse_k" { Strategy::FedWorseK { k } } else { Strategy::FedBetterK { k } });
        }
        "fedsoftworse" | "fedsoftbetter" => {
            let v = take(args, &[T_KEYS], at)?;
            let temperature = temperature(v[0], at)?;
            return Ok(if name == "fedsoftworse" {
                Strategy::FedSoftWorse { temperature }
            } else {
                Strategy::FedSoftBetter { temperature }
            });
        }
        "fedsoftbetteravgsoftworse" => {
            let v = take(args, &[T_KEYS, &["switch"], &["switch2"]], at)?;
            let t = temperature(v[0], at)?;
            let s1 = switch_round(v[1], DEFAULT_SWITCH_ROUND, at)?;
            let s2 = switch_round(v[2], 2 * s1, at)?;
            if s2 <= s1 {
                return Err(ParseError { position: at, message: "switch2 must exceed switch".into() });
            }
            return Ok(Strategy::Discrete(vec![
                Phase { strategy: Strategy::FedSoftBetter { temperature: t }, until: Some(Trigger::RoundBelow(s1)) },
                Phase { strategy: Strategy::FedAvg, until: Some(Trigger::RoundBelow(s2)) },
                Phase { strategy: Strategy::FedSoftWorse { temperature: t }, until: None },
            ]));
        }
        _ => {}
    }
    // fed<X>avg or fedavg<X>
    let hybrid = name.strip_prefix("fed").and_then(|rest| {
        if let Some(x) = rest.strip_prefix("avg") {
            Some(("avg", x))
        } else {
            rest.strip_suffix("avg").map(|x| (x, "avg"))
        }
    });
    if let Some((first, second)) = hybrid {
        let v = take(args, &[T_KEYS, &["switch"]], at)?;
        let t = temperature(v[0], at)?;
        let s = switch_round(v[1], DEFAULT_SWITCH_ROUND, at)?;
        if let (Some(a), Some(b)) = (component(first, t), component(second, t)) {
            if a != b {
                return Ok(Strategy::switch_at(a, b, s));
            }
        }
    }
    Err(ParseError { position: at, message: format!("unknown strategy '{name}'") })
}

pub(super) fn parse_strategy(src: &str) -> PResult<Strategy> {
    let mut p = Parser { src, pos: 0 };
    let s = p.strategy()?;
    p.skip_ws();
    if p.pos != src.len() {
        return p.err(p.pos, format!("unexpected trailing input '{}'", &src[p.pos..]));
    }
    Ok(s)
}
