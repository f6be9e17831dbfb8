use openstab_core::Error;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_DIMENSION: u8 = 3;
pub const EXIT_NO_METHOD: u8 = 4;
pub const EXIT_DOMAIN: u8 = 5;
pub const EXIT_ENVELOPE: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    /// A method whose preconditions fail maps to "no method applies".
    pub fn method(e: Error) -> Self {
        match e {
            Error::Precondition(_) | Error::NotLinearlyOpen | Error::RankDeficient(_) => {
                Failure::new(EXIT_NO_METHOD, e.to_string())
            }
            other => other.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Syntax { .. } | Error::UnknownVariable { .. } => EXIT_PARSE,
            Error::Dimension(_) => EXIT_DIMENSION,
            Error::OutOfDomain(_) => EXIT_DOMAIN,
            _ => EXIT_OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_OTHER, e.to_string())
    }
}
