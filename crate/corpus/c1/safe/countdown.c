for (i = 0; i < N; i++) {
  A[i] = N - i;
}
// assert(forall i in [0, N) :: A[i] > 0)
