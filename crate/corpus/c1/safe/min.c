m = 0;
for (i = 0; i < N; i++) {
  if (A[i] < m) {
    m = A[i];
  }
}
// assert(forall i in [0, N) :: m <= A[i])
