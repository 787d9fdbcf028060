//! American English number verbalization.

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
    "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];

const TENS: [&str; 10] = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
];

pub const MAX_CARDINAL: u64 = 999_999_999;

pub const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn push_below_thousand(n: u64, out: &mut Vec<String>) {
    debug_assert!(n < 1000);
    let hundreds = n / 100;
    let rest = n % 100;
    if hundreds > 0 {
        out.push(ONES[hundreds as usize].to_string());
        out.push("hundred".to_string());
    }
    if rest >= 20 {
        out.push(TENS[(rest / 10) as usize].to_string());
        if rest % 10 != 0 {
            out.push(ONES[(rest % 10) as usize].to_string());
        }
    } else if rest > 0 {
        out.push(ONES[rest as usize].to_string());
    }
}

/// Cardinal reading of `n`, or `None` above [`MAX_CARDINAL`].
pub fn cardinal(n: u64) -> Option<Vec<String>> {
    if n > MAX_CARDINAL {
        return None;
    }
    if n == 0 {
        return Some(vec!["zero".to_string()]);
    }
    let mut out = Vec::new();
    let millions = n / 1_000_000;
    let thousands = (n / 1000) % 1000;
    let rest = n % 1000;
    if millions > 0 {
        push_below_thousand(millions, &mut out);
        out.push("million".to_string());
    }
    if thousands > 0 {
        push_below_thousand(thousands, &mut out);
        out.push("thousand".to_string());
    }
    push_below_thousand(rest, &mut out);
    Some(out)
}

/// Reads a digit string as a cardinal, falling back to digit-by-digit
/// reading when it is out of range.
pub fn cardinal_or_digits(digits: &str) -> Vec<String> {
    let trimmed = digits.trim_start_matches('0');
    if trimmed.len() <= 9 {
        if let Ok(n) = digits.parse::<u64>() {
            if let Some(words) = cardinal(n) {
                return words;
            }
        }
    }
    digit_words(digits)
}

pub fn digit_words(digits: &str) -> Vec<String> {
    digits
        .chars()
        .filter_map(|c| c.to_digit(10))
        .map(|d| ONES[d as usize].to_string())
        .collect()
}

fn ordinal_word(word: &str) -> String {
    match word {
        "one" => "first".to_string(),
        "two" => "second".to_string(),
        "three" => "third".to_string(),
        "five" => "fifth".to_string(),
        "eight" => "eighth".to_string(),
        "nine" => "ninth".to_string(),
        "twelve" => "twelfth".to_string(),
        w if w.ends_with('y') => format!("{}ieth", &w[..w.len() - 1]),
        w => format!("{w}th"),
    }
}

pub fn ordinal(n: u64) -> Option<Vec<String>> {
    let mut words = cardinal(n)?;
    let last = words.pop()?;
    words.push(ordinal_word(&last));
    Some(words)
}

/// The English suffix written after `n` ("st", "nd", "rd", "th").
pub fn ordinal_suffix(n: u64) -> &'static str {
    match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

/// Fraction reading: numerator cardinal plus the denominator as an ordinal,
/// pluralized when the numerator is not one. Halves and quarters use their
/// conventional names.
pub fn fraction(numerator: u64, denominator: u64) -> Option<Vec<String>> {
    if denominator < 2 {
        return None;
    }
    let mut words = cardinal(numerator)?;
    let plural = numerator != 1;
    let denom = match denominator {
        2 => vec![if plural { "halves" } else { "half" }.to_string()],
        4 => vec![if plural { "quarters" } else { "quarter" }.to_string()],
        d => {
            let mut w = ordinal(d)?;
            if plural {
                if let Some(last) = w.last_mut() {
                    last.push('s');
                }
            }
            w
        }
    };
    words.extend(denom);
    Some(words)
}

/// Year reading for 1000..=9999, e.g. 1999 -> "nineteen ninety nine",
/// 2005 -> "two thousand five", 2023 -> "twenty twenty three".
pub fn year(n: u64) -> Option<Vec<String>> {
    if !(1000..=9999).contains(&n) {
        return None;
    }
    if (2000..=2009).contains(&n) || n % 1000 == 0 {
        return cardinal(n);
    }
    let high = n / 100;
    let low = n % 100;
    let mut words = cardinal(high)?;
    if low == 0 {
        words.push("hundred".to_string());
    } else if low < 10 {
        words.push("oh".to_string());
        words.push(ONES[low as usize].to_string());
    } else {
        words.extend(cardinal(low)?);
    }
    Some(words)
}

/// Clock reading of `hour:minute`.
pub fn clock(hour: u64, minute: u64) -> Option<Vec<String>> {
    if hour > 23 || minute > 59 {
        return None;
    }
    let mut words = cardinal(hour)?;
    if minute == 0 {
        words.push("o'clock".to_string());
    } else if minute < 10 {
        words.push("oh".to_string());
        words.push(ONES[minute as usize].to_string());
    } else {
        words.extend(cardinal(minute)?);
    }
    Some(words)
}

pub fn month_index(word: &str) -> Option<usize> {
    let lower = word.to_lowercase();
    MONTHS
        .iter()
        .position(|m| *m == lower || (lower.len() == 3 && m.starts_with(&lower)))
}
