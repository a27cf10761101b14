use crate::scalar::Scalar;

/// Named, shaped parameter or buffer storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param shape");
        Self {
            name: name.into(),
            shape,
            value,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}
