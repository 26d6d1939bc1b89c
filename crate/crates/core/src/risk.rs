//! CAPM beta, Jensen's alpha, Sharpe ratios and the power-law fit of alpha
//! against cumulative decile.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, RiskError};
use crate::portfolio::{annualize, compound, BacktestLedger, PortfolioSpec, Side, SIZES};
use crate::stats;

fn check_pair(strategy: &[f64], market: &[f64]) -> Result<(), RiskError> {
    if strategy.len() != market.len() {
        return Err(RiskError::LengthMismatch(strategy.len(), market.len()));
    }
    if strategy.len() < 3 {
        return Err(RiskError::TooShort {
            needed: 3,
            got: strategy.len(),
        });
    }
    Ok(())
}

/// Sample covariance with the market over sample market variance.
pub fn beta_of(strategy_returns: &[f64], market_returns: &[f64]) -> Result<f64, RiskError> {
    check_pair(strategy_returns, market_returns)?;
    let var = stats::variance(market_returns);
    if !(var > 0.0) {
        return Err(RiskError::ZeroMarketVariance);
    }
    Ok(stats::covariance(strategy_returns, market_returns) / var)
}

/// Annualized (×4) Jensen's alpha from quarterly returns.
pub fn jensen_alpha(strategy_returns: &[f64], market_returns: &[f64], rf_quarterly: f64) -> Result<f64, RiskError> {
    let beta = beta_of(strategy_returns, market_returns)?;
    let ms = stats::mean(strategy_returns);
    let mm = stats::mean(market_returns);
    Ok(((ms - rf_quarterly) - beta * (mm - rf_quarterly)) * 4.0)
}

/// Residuals of the excess-return regression on the market, one per quarter.
pub fn capm_residuals(strategy_returns: &[f64], market_returns: &[f64], rf_quarterly: f64) -> Result<Vec<f64>, RiskError> {
    let beta = beta_of(strategy_returns, market_returns)?;
    let ys: Vec<f64> = strategy_returns.iter().map(|r| r - rf_quarterly).collect();
    let xs: Vec<f64> = market_returns.iter().map(|r| r - rf_quarterly).collect();
    let intercept = stats::mean(&ys) - beta * stats::mean(&xs);
    Ok(ys.iter().zip(&xs).map(|(y, x)| y - intercept - beta * x).collect())
}

/// Quarterly population standard deviation scaled to a year.
pub fn annualized_volatility(returns: &[f64]) -> f64 {
    stats::population_std(returns) * 2.0
}

/// (geometric annual return − rf) / annualized volatility.
pub fn sharpe(strategy_returns: &[f64], rf_annual: f64) -> Result<f64, Error> {
    if strategy_returns.len() < 2 {
        return Err(RiskError::TooShort {
            needed: 2,
            got: strategy_returns.len(),
        }
        .into());
    }
    let vol = annualized_volatility(strategy_returns);
    let scale = strategy_returns.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(1.0);
    if !(vol > 1e-15 * scale) {
        return Err(RiskError::ZeroVariance.into());
    }
    let annual = annualize(compound(strategy_returns)?, strategy_returns.len())?;
    Ok((annual - rf_annual) / vol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    /// Decile sizes left out because their alpha was not positive.
    pub excluded: Vec<usize>,
}

/// Least squares on log α = log a + b log CD, with CD the portfolio size
/// (10..100) matching each alpha.
pub fn fit_power_law(alphas: &[f64]) -> Result<PowerFit, RiskError> {
    if alphas.len() != SIZES.len() {
        return Err(RiskError::LengthMismatch(alphas.len(), SIZES.len()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for (&cd, &a) in SIZES.iter().zip(alphas) {
        if a > 0.0 {
            xs.push((cd as f64).ln());
            ys.push(a.ln());
        } else {
            warn!("alpha {a} at CD {cd} is not positive; left out of the power-law fit");
            excluded.push(cd);
        }
    }
    if xs.len() < 3 {
        return Err(RiskError::TooFewPositive(xs.len()));
    }
    let (mx, my) = (stats::mean(&xs), stats::mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let intercept = my - b * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - b * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PowerFit {
        a: intercept.exp(),
        b,
        r_squared,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRisk {
    pub portfolio: PortfolioSpec,
    pub annualized_return: f64,
    pub annualized_volatility: f64,
    /// `None` when the series has no variance.
    pub sharpe: Option<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub rf_annual: f64,
    pub portfolios: Vec<PortfolioRisk>,
    /// Universe-mean series treated as a portfolio.
    pub market_annualized_return: f64,
    pub market_sharpe: Option<f64>,
    /// Fit over the hedged alphas; `None` when too few are positive.
    pub power_fit: Option<PowerFit>,
}

impl RiskReport {
    pub fn get(&self, spec: PortfolioSpec) -> Option<&PortfolioRisk> {
        self.portfolios.iter().find(|p| p.portfolio == spec)
    }
}

/// Risk measures for all thirty portfolios of a ledger, with the ledger's
/// universe mean as the market.
pub fn risk_report(ledger: &BacktestLedger) -> Result<RiskReport, Error> {
    let market = &ledger.universe_mean;
    let rf_q = ledger.rf_annual / 4.0;
    let mut portfolios = Vec::new();
    for spec in PortfolioSpec::all() {
        let series = ledger.series(spec);
        let sharpe = match sharpe(&series, ledger.rf_annual) {
            Ok(s) => Some(s),
            Err(Error::Risk(RiskError::ZeroVariance)) => None,
            Err(e) => return Err(e),
        };
        portfolios.push(PortfolioRisk {
            portfolio: spec,
            annualized_return: annualize(compound(&series)?, series.len())?,
            annualized_volatility: annualized_volatility(&series),
            sharpe,
            beta: beta_of(&series, market)?,
            alpha: jensen_alpha(&series, market, rf_q)?,
            residuals: capm_residuals(&series, market, rf_q)?,
        });
    }
    let hedged_alphas: Vec<f64> = portfolios
        .iter()
        .filter(|p| p.portfolio.side == Side::Hedged)
        .map(|p| p.alpha)
        .collect();
    let power_fit = match fit_power_law(&hedged_alphas) {
        Ok(f) => Some(f),
        Err(RiskError::TooFewPositive(n)) => {
            warn!("only {n} positive hedged alphas; no power-law fit");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let market_sharpe = sharpe(market, ledger.rf_annual).ok();
    Ok(RiskReport {
        rf_annual: ledger.rf_annual,
        portfolios,
        market_annualized_return: annualize(compound(market)?, market.len())?,
        market_sharpe,
        power_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn market() -> Vec<f64> {
        vec![0.05, -0.02, 0.11, 0.03, -0.07, 0.02, 0.09, -0.01]
    }

    #[test]
    fn beta_examples() {
        let m = market();
        assert_eq!(beta_of(&m, &m).unwrap(), 1.0);
        let s: Vec<f64> = m.iter().map(|x| 2.0 * x).collect();
        assert!((beta_of(&s, &m).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(beta_of(&[0.1; 5], &[0.02; 5]), Err(RiskError::ZeroMarketVariance)));
        assert!(beta_of(&m[..2], &m[..2]).is_err());
        assert!(beta_of(&m, &m[..5]).is_err());
    }

    #[test]
    fn beta_of_independent_noise() {
        let mut rng = crate::rng::stream(42);
        let m: Vec<f64> = (0..10_000).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        let s: Vec<f64> = (0..10_000).map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(beta_of(&s, &m).unwrap().abs() < 0.05);
    }

    #[test]
    fn alpha_examples() {
        let m = market();
        assert_eq!(jensen_alpha(&m, &m, 0.015).unwrap(), 0.0);
        let rf = vec![0.015; m.len()];
        assert!(jensen_alpha(&rf, &m, 0.015).unwrap().abs() < 1e-15);
        let s: Vec<f64> = m.iter().map(|x| x + 0.01).collect();
        assert!((jensen_alpha(&s, &m, 0.015).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn sharpe_examples() {
        let alt: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 0.10 } else { -0.10 }).collect();
        assert!((annualized_volatility(&alt) - 0.2).abs() < 1e-12);
        let annual = 0.99f64.powi(4).powf(4.0 / 8.0) - 1.0;
        assert!((annual + 0.0199).abs() < 1e-12);
        let s = sharpe(&alt, 0.06).unwrap();
        assert!((s - (annual - 0.06) / 0.2).abs() < 1e-12);
        assert!(matches!(sharpe(&[0.015; 6], 0.06), Err(Error::Risk(RiskError::ZeroVariance))));
    }

    #[test]
    fn power_law_examples() {
        let alphas: Vec<f64> = SIZES.iter().map(|&cd| 0.35 * (cd as f64).powf(-0.25)).collect();
        let fit = fit_power_law(&alphas).unwrap();
        assert!((fit.a - 0.35).abs() < 1e-9);
        assert!((fit.b + 0.25).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
        let flat = fit_power_law(&[0.2; 10]).unwrap();
        assert!(flat.b.abs() < 1e-12);
        let mut some_bad = alphas.clone();
        some_bad[0] = -0.1;
        some_bad[3] = 0.0;
        assert_eq!(fit_power_law(&some_bad).unwrap().excluded, vec![10, 40]);
        assert!(matches!(
            fit_power_law(&[0.1, 0.1, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]),
            Err(RiskError::TooFewPositive(2))
        ));
    }

    proptest! {
        #[test]
        fn residuals_have_zero_mean(s in prop::collection::vec(-0.5f64..0.5, 3..40), seed in 0u64..1000) {
            let mut rng = crate::rng::stream(seed);
            let m: Vec<f64> = s.iter().map(|_| rng.random_range(-0.3..0.3)).collect();
            let res = capm_residuals(&s, &m, 0.015).unwrap();
            prop_assert!(stats::mean(&res).abs() < 1e-9);
        }

        #[test]
        fn beta_shift_and_scale(s in prop::collection::vec(-0.5f64..0.5, 5..30), c in -0.2f64..0.2, k in 0.1f64..5.0) {
            let m: Vec<f64> = (0..s.len()).map(|i| ((i * 7919) % 13) as f64 / 50.0 - 0.1).collect();
            let b = beta_of(&s, &m).unwrap();
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let scaled: Vec<f64> = s.iter().map(|x| x * k).collect();
            prop_assert!((beta_of(&shifted, &m).unwrap() - b).abs() < 1e-9);
            prop_assert!((beta_of(&scaled, &m).unwrap() - k * b).abs() < 1e-9 * k.max(1.0));
        }

        #[test]
        fn alpha_of_market_is_zero(m in prop::collection::vec(-0.5f64..0.5, 3..30), rf in 0.0f64..0.05) {
            prop_assume!(stats::variance(&m) > 1e-12);
            prop_assert_eq!(jensen_alpha(&m, &m, rf).unwrap(), 0.0);
        }

        #[test]
        fn sharpe_sign_matches_excess(s in prop::collection::vec(-0.5f64..0.5, 2..30), rf in 0.0f64..0.1) {
            prop_assume!(stats::population_std(&s) > 1e-6);
            let excess = annualize(compound(&s).unwrap(), s.len()).unwrap() - rf;
            let sr = sharpe(&s, rf).unwrap();
            prop_assert_eq!(sr > 0.0, excess > 0.0);
        }
    }
}
