//! Dense discrete factors. Variables are node indices kept in ascending
//! order; values are row-major with the last variable varying fastest.

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Factor {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

impl Factor {
    pub fn scalar(v: f64) -> Self {
        Factor { vars: Vec::new(), cards: Vec::new(), values: vec![v] }
    }

    /// Builds a factor from variables in arbitrary order, reordering values
    /// so that `vars` ends up ascending.
    pub fn from_unordered(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        let mut perm: Vec<usize> = (0..vars.len()).collect();
        perm.sort_by_key(|&i| vars[i]);
        let sorted_vars: Vec<usize> = perm.iter().map(|&i| vars[i]).collect();
        let sorted_cards: Vec<usize> = perm.iter().map(|&i| cards[i]).collect();
        if sorted_vars == vars {
            return Factor { vars, cards, values };
        }
        let src_strides = strides(&cards);
        let mut out = vec![0.0; values.len()];
        let mut assign = vec![0usize; sorted_vars.len()];
        for slot in out.iter_mut() {
            let mut src = 0;
            for (k, &orig) in perm.iter().enumerate() {
                src += assign[k] * src_strides[orig];
            }
            *slot = values[src];
            advance(&mut assign, &sorted_cards);
        }
        Factor { vars: sorted_vars, cards: sorted_cards, values: out }
    }

    pub fn contains(&self, var: usize) -> bool {
        self.vars.binary_search(&var).is_ok()
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        for (&v, &c) in other.vars.iter().zip(&other.cards) {
            if let Err(pos) = vars.binary_search(&v) {
                vars.insert(pos, v);
                cards.insert(pos, c);
            }
        }
        let map_a = embed_strides(&vars, &self.vars, &self.cards);
        let map_b = embed_strides(&vars, &other.vars, &other.cards);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        for _ in 0..size {
            let (mut ia, mut ib) = (0, 0);
            for k in 0..vars.len() {
                ia += assign[k] * map_a[k];
                ib += assign[k] * map_b[k];
            }
            values.push(self.values[ia] * other.values[ib]);
            advance(&mut assign, &cards);
        }
        Factor { vars, cards, values }
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let Ok(pos) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let out_strides = embed_strides(&self.vars, &vars, &cards);
        let mut values = vec![0.0; cards.iter().product()];
        let mut assign = vec![0usize; self.vars.len()];
        for &v in &self.values {
            let idx: usize = assign.iter().zip(&out_strides).map(|(a, s)| a * s).sum();
            values[idx] += v;
            advance(&mut assign, &self.cards);
        }
        Factor { vars, cards, values }
    }

    /// Restricts `var` to `state` and drops it.
    pub fn reduce(&self, var: usize, state: usize) -> Factor {
        let Ok(pos) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let src = strides(&self.cards);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        for _ in 0..size {
            let mut idx = state * src[pos];
            for (k, a) in assign.iter().enumerate() {
                let orig = if k < pos { k } else { k + 1 };
                idx += a * src[orig];
            }
            values.push(self.values[idx]);
            advance(&mut assign, &cards);
        }
        Factor { vars, cards, values }
    }
}

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; cards.len()];
    for i in (0..cards.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[i + 1];
    }
    s
}

/// Stride of each variable of `outer` inside a factor over `inner`
/// (0 for variables the inner factor lacks).
fn embed_strides(outer: &[usize], inner: &[usize], inner_cards: &[usize]) -> Vec<usize> {
    let s = strides(inner_cards);
    outer.iter().map(|v| inner.binary_search(v).map(|i| s[i]).unwrap_or(0)).collect()
}

fn advance(assign: &mut [usize], cards: &[usize]) {
    for k in (0..assign.len()).rev() {
        assign[k] += 1;
        if assign[k] < cards[k] {
            return;
        }
        assign[k] = 0;
    }
}
