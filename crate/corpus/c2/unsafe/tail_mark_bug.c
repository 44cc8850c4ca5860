for (i = 0; i < N; i++) {
  if (i < N - 1) {
    A[i] = 1;
  } else {
    A[i] = 0;
  }
}
// assert(forall i in [0, N) :: A[i] >= 1)
