for (i = 0; i < N; i++) {
  if (i == N - 1) {
    B[i] = 0;
  } else {
    B[i] = 1;
  }
}
// assert(forall i in [0, N) :: B[i] <= 1)
