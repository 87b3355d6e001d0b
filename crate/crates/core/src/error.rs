use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid with {cells} cells exceeds the cell budget of {budget}")]
    CellBudgetExceeded { cells: u128, budget: u64 },

    #[error("fine grid has odd cell count {0}; parity subgrids need an even count")]
    OddGrid(usize),

    #[error("embedding not non-negative definite; increase padding (min eigenvalue {min_eigenvalue:e} at padding factor {padding})")]
    EmbeddingNotNonNegative { min_eigenvalue: f64, padding: usize },

    #[error("CGV requires stationary permeability")]
    NonStationary,

    #[error("singular system: at least one Dirichlet face is required")]
    SingularSystem,

    #[error("permeability must be strictly positive, got {0}")]
    NonPositivePermeability(f64),

    #[error("averaging box is not resolvable on a grid with m = {m}")]
    BoxNotResolvable { m: usize },

    #[error("outflow through a Neumann face is prescribed data, not a computed flux")]
    NeumannOutflow,

    #[error("PCG did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("rate fit needs at least 3 usable levels, got {0}")]
    TooFewLevels(usize),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
